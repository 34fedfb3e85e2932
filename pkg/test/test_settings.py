import pytest

from app.models import ImageMetric, InputError
from app.utils.settings import env_overrides, log_level, resolve_config


def test_defaults():
    cfg = resolve_config(environ={})
    assert cfg.t == 0.05
    assert cfg.pose_dist_max == 0.1
    assert cfg.torso_angle_max == 0.4
    assert cfg.shortlist_len == 50
    assert cfg.min_inliers == 7
    assert cfg.metric == ImageMetric.T


def test_environment_then_flags():
    environ = {"POSELINK_T": "0.2", "POSELINK_SHORTLIST_LEN": "12", "POSELINK_METRIC": "min", "OTHER": "x"}
    assert env_overrides(environ) == {"t": "0.2", "shortlist_len": "12", "metric": "min"}
    cfg = resolve_config({"shortlist_len": 5, "workers": None}, environ)
    assert cfg.t == 0.2
    assert cfg.shortlist_len == 5
    assert cfg.metric == ImageMetric.MIN
    assert cfg.workers == 1


@pytest.mark.parametrize("overrides, environ", [
    ({"t": -1.0}, {}),
    ({}, {"POSELINK_SHORTLIST_LEN": "many"}),
    ({"metric": "median"}, {}),
])
def test_invalid_settings(overrides, environ):
    with pytest.raises(InputError, match="invalid setting"):
        resolve_config(overrides, environ)


def test_log_level():
    assert log_level({}) == "INFO"
    assert log_level({"POSELINK_LOG_LEVEL": "debug"}) == "DEBUG"
