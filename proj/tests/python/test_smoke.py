import math

import numpy as np
import pytest

import clustcr


@pytest.fixture(scope="module")
def data():
    return clustcr.simulate(scenario=1, n=60, seed=4)


@pytest.fixture(scope="module")
def model(data):
    return clustcr.fit(data)


def test_simulated_dataset_shape(data):
    assert data.n_clusters == 60
    assert data.k == 2
    assert data.p == 2
    assert data.n_subjects >= 60 * 20


def test_csv_round_trip_gives_same_fit(tmp_path, data, model):
    path = tmp_path / "d.csv"
    data.to_csv(str(path))
    again = clustcr.fit(clustcr.Dataset.from_csv(str(path)))
    for l in (1, 2):
        np.testing.assert_allclose(again.beta(l), model.beta(l), rtol=0, atol=1e-12)


def test_fit_outputs(model):
    assert model.converged
    grid = np.asarray(model.grid)
    assert np.all(np.diff(grid) > 0)
    for l in (1, 2):
        beta, se = model.beta(l), model.se(l)
        assert beta.shape == (2,) and np.all(se > 0)
        np.testing.assert_allclose(np.sqrt(np.diag(model.cov(l))), se, rtol=1e-12)
        lam = model.cumhaz(l)
        assert lam.shape == grid.shape and np.all(np.diff(lam) >= 0)
        assert np.all(model.cumhaz_se(l) >= 0)


def test_cif_and_band(model):
    z0 = np.array([0.5, 1.0])
    f = model.cif(1, z0)
    assert np.all(f >= 0) and np.all(np.diff(f) >= -1e-15)
    band = model.band(1, target="cif", weight="hw", nsim=200, seed=3, z0=z0)
    again = model.band(1, target="cif", weight="hw", nsim=200, seed=3, z0=z0)
    assert band["c_alpha"] == again["c_alpha"]
    lo, hi, est = map(np.asarray, (band["lower"], band["upper"], band["estimate"]))
    assert np.all(lo <= est) and np.all(est <= hi)
    assert np.all(lo >= 0) and np.all(hi <= 1)


def test_gof(data):
    r = clustcr.gof(data, cause=1, nsim=200, seed=2)
    assert 0 < r["p_value"] <= 1
    assert math.isclose(r["statistic"], max(abs(v) for v in r["process"]), rel_tol=1e-15)


def test_errors_map_to_python(tmp_path, model):
    bad = tmp_path / "bad.csv"
    bad.write_text("cluster_id,time,delta,cause,r,z1,oops\n1,0.5,1,1,1,0.2,3\n")
    with pytest.raises(clustcr.DataError, match="oops"):
        clustcr.Dataset.from_csv(str(bad))
    with pytest.raises(clustcr.DomainError):
        model.cif(1, np.array([1.0]))
    with pytest.raises(clustcr.Error):
        model.beta(3)
