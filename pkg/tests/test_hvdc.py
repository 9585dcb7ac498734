import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acdcfreq.hvdc import (EpcController, aggregate_beta_h, converter_dynamics, epc_droop,
                           epc_output, uniform_droop, with_epc)
from acdcfreq.model import EpcSpec, FrequencyTargets, HvdcLinkSpec
from acdcfreq.tuning import uniform_droops

T = FrequencyTargets()


def test_back_derived_stiffness_of_link_fleet(nps_lite):
    assert sum(k.p_n_mw for k in nps_lite.hvdc_links) == pytest.approx(8563.5)
    s = uniform_droops(nps_lite, 0.33)
    assert aggregate_beta_h(s.hvdc_links) == pytest.approx(8563.5 / (0.33 * 50))
    assert abs(aggregate_beta_h(s.hvdc_links) - 519.0) < 1.0


def test_uniform_droop_inverts_stiffness():
    r = uniform_droop(8563.5, 519.0)
    assert 8563.5 / (r * 50) == pytest.approx(519.0)
    assert math.isinf(uniform_droop(8563.5, 0.0))


def test_disabled_links_do_not_count():
    a = HvdcLinkSpec("A", "X", 1000.0, 0.0, epc=EpcSpec(enabled=True, r_pu=0.1))
    b = HvdcLinkSpec("B", "X", 1000.0, 0.0, epc=EpcSpec(enabled=False, r_pu=0.1))
    assert aggregate_beta_h([a, b]) == 200.0


def test_headroom_from_operating_point():
    k = HvdcLinkSpec("A", "X", 600.0, 450.0)
    assert k.import_headroom_mw == 150.0
    assert k.export_headroom_mw == 1050.0
    k2 = HvdcLinkSpec("A", "X", 600.0, 450.0, epc=EpcSpec(headroom_import_mw=100.0))
    assert k2.import_headroom_mw == 100.0


def test_with_epc_toggles():
    k = HvdcLinkSpec("A", "X", 600.0, 0.0)
    assert with_epc(k, 0.2).epc.enabled and with_epc(k, 0.2).epc.r_pu == 0.2
    assert not with_epc(k, math.inf).epc.enabled
    assert not with_epc(k, None).epc.enabled


def test_converter_lag():
    assert converter_dynamics(10.0, 30.0, 0.1) == pytest.approx(200.0)


@settings(max_examples=300, deadline=None)
@given(f=st.floats(45.0, 55.0), p_n=st.floats(1.0, 3000.0), r=st.floats(0.01, 2.0),
       head=st.floats(0.0, 3000.0))
def test_epc_droop_properties(f, p_n, r, head):
    out = float(epc_droop(f, p_n, r, head, T))
    if f >= T.f_tfl:
        assert out == 0.0
    else:
        raw = p_n * (T.f_tfl - f) / (r * T.f_n)
        assert out == pytest.approx(min(raw, head), rel=1e-12, abs=1e-12)
    assert 0.0 <= out <= head


@settings(max_examples=100, deadline=None)
@given(f=st.floats(48.0, 49.59), df=st.floats(1e-4, 0.05))
def test_epc_droop_is_monotone(f, df):
    lo = float(epc_droop(f - df, 1000.0, 0.3, np.inf, T))
    hi = float(epc_droop(f, 1000.0, 0.3, np.inf, T))
    assert lo >= hi


def test_controller_disabled_gives_zero():
    c = EpcController(False, 0.3, 1000.0, 500.0)
    assert np.all(epc_output(np.array([48.0, 49.0]), c, T) == 0.0)
    assert c.beta_mw_hz() == 0.0
    on = EpcController(True, 0.25, 1000.0, 500.0)
    assert on.beta_mw_hz() == 80.0
    assert float(epc_output(49.5, on, T)) == pytest.approx(8.0)
