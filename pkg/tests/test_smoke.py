import icrl_lab
from icrl_lab.config import load_config


def test_package_exports_the_main_entry_points() -> None:
    for name in ("ConstraintNet", "backward_phase", "solve_forward", "train", "transfer", "load_config", "make_env"):
        assert hasattr(icrl_lab, name), name


def test_shipped_config_loads() -> None:
    """The repository's config.yaml is found from the test directory and validates."""
    cfg = load_config()
    assert cfg.env.name in icrl_lab.envs.ENV_REGISTRY
    assert cfg.backward.iterations >= 0
