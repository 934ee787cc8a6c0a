import pytest
from hypothesis import given
from hypothesis import strategies as st

from cyclet.schedules import ScheduleConfig, gamma_at, lambda_at, lr_at

DEFAULT = ScheduleConfig()


def test_lambda_examples():
    assert lambda_at(DEFAULT, 0) == 10.0
    assert lambda_at(DEFAULT, 200) == 1.0 > 0
    assert lambda_at(DEFAULT, 100) == pytest.approx(5.5, abs=1e-12)


def test_gamma_examples():
    assert gamma_at(DEFAULT, 0) == 0.0
    assert gamma_at(DEFAULT, 200) == 0.9 < 1
    assert gamma_at(DEFAULT, 100) == pytest.approx(0.45, abs=1e-12)


def test_lr_examples():
    assert lr_at(DEFAULT, 50) == 2e-4
    assert lr_at(DEFAULT, 200) == 0.0
    assert abs(lr_at(DEFAULT, 150) - 1e-4) <= 1e-12
    assert all(lr_at(DEFAULT, t) == 2e-4 for t in range(0, 100))
    assert lr_at(DEFAULT, 100) == 2e-4


@pytest.mark.parametrize("fn", [lambda_at, gamma_at, lr_at])
@pytest.mark.parametrize("t", [-1, 201, 1e9])
def test_out_of_range_epoch(fn, t):
    with pytest.raises(ValueError):
        fn(DEFAULT, t)


def test_offset_ramp_clamps():
    cfg = ScheduleConfig(total_epochs=50, lambda_ramp_start=10, lambda_ramp_end=30,
                         gamma_ramp_start=20, gamma_ramp_end=40)
    assert lambda_at(cfg, 5) == 10.0
    assert lambda_at(cfg, 20) == pytest.approx(5.5)
    assert lambda_at(cfg, 45) == 1.0
    assert gamma_at(cfg, 10) == 0.0
    assert gamma_at(cfg, 30) == pytest.approx(0.45)


def test_degenerate_span_is_a_step():
    cfg = ScheduleConfig(total_epochs=10, lambda_ramp_start=4, lambda_ramp_end=4,
                         gamma_ramp_start=4, gamma_ramp_end=4, lr_constant_epochs=10)
    assert [lambda_at(cfg, t) for t in (3, 4, 5)] == [10.0, 1.0, 1.0]
    assert [gamma_at(cfg, t) for t in (3, 4, 5)] == [0.0, 0.9, 0.9]
    assert lr_at(cfg, 10) == 0.0


@pytest.mark.parametrize("bad", [
    dict(lambda_end=0.0), dict(lambda_end=11.0), dict(gamma_end=1.0), dict(gamma_start=0.5, gamma_end=0.4),
    dict(lr_constant_epochs=300), dict(lambda_ramp_start=50, lambda_ramp_end=10), dict(total_epochs=0),
])
def test_invalid_configs_rejected(bad):
    with pytest.raises(ValueError):
        ScheduleConfig(**bad).validate()


configs = st.builds(
    lambda total, ls, le_frac, gs_frac, ge, c_frac, a, b, c, d: ScheduleConfig(
        total_epochs=total, lambda_start=ls, lambda_end=ls * le_frac, gamma_start=ge * gs_frac, gamma_end=ge,
        lr_constant_epochs=int(total * c_frac),
        lambda_ramp_start=min(a, b) % (total + 1), lambda_ramp_end=max(a, b) % (total + 1) if max(a, b) <= total else total,
        gamma_ramp_start=min(c, d) % (total + 1), gamma_ramp_end=total if max(c, d) > total else max(c, d)),
    st.integers(1, 300), st.floats(0.01, 50), st.floats(0.001, 1), st.floats(0, 1), st.floats(0, 0.999),
    st.floats(0, 1), st.integers(0, 300), st.integers(0, 300), st.integers(0, 300), st.integers(0, 300),
)


@given(configs, st.data())
def test_schedule_properties(cfg, data):
    try:
        cfg.validate()
    except ValueError:
        return
    t1 = data.draw(st.floats(0, cfg.total_epochs))
    t2 = data.draw(st.floats(t1, cfg.total_epochs))
    assert lambda_at(cfg, t2) <= lambda_at(cfg, t1)
    assert gamma_at(cfg, t2) >= gamma_at(cfg, t1)
    assert lr_at(cfg, t2) <= lr_at(cfg, t1)
    assert lambda_at(cfg, t1) > 0
    assert gamma_at(cfg, t1) < 1
    assert lambda_at(cfg, cfg.total_epochs) == cfg.lambda_end
    assert gamma_at(cfg, cfg.total_epochs) == cfg.gamma_end
