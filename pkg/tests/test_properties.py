import numpy as np

from ptpmx import evaluation as ev
from ptpmx import pdf as pd
from ptpmx import properties as pr


def test_suite_passes_default_seed():
    report = pr.property_suite(0)
    failed = [r.name for r in report.results if not r.passed]
    assert not failed, report.to_csv()
    assert report.to_csv().splitlines()[0].endswith("mse_us2=0.0625")


def test_negative_control_normalization():
    bad = pd.EmpiricalPdf.unchecked(0.01, 0.0, np.full(100, 0.9))
    assert not pr.check_normalization({"bad": bad}).passed


def test_threshold_header():
    r = pr.check_threshold(ev.ThresholdSpec(1.25, 5.0))
    assert r.passed and "mse=0.0625" in r.detail
