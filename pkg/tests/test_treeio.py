import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from drrrt.errors import TreeFormatError
from drrrt.planner import audit_tree, plan
from drrrt.plotting import ellipse_params, polygon_2d, save_svg, tree_figure
from drrrt.environment import Polytope
from drrrt.treeio import dumps_tree, loads_tree


@pytest.fixture(scope="module")
def small_run():
    from drrrt.cli import bundled_scenario
    from drrrt.scenario import load_scenario
    import dataclasses

    env, sys_, params = load_scenario(bundled_scenario())
    params = dataclasses.replace(params, samples=40)
    return env, sys_, params, plan(env, sys_, params, seed=1)


def _load(text, env, sys_):
    return loads_tree(text, sys_.n, env.N, env.n_e)


def test_round_trip_is_exact(small_run):
    env, sys_, params, res = small_run
    text = dumps_tree(res.tree, params, 1)
    header, tree = _load(text, env, sys_)
    assert header["seed"] == 1 and header["nodes"] == len(res.tree)
    assert dumps_tree(tree, params, 1) == text
    for a, b in zip(res.tree.nodes, tree.nodes):
        np.testing.assert_array_equal(a.state.cov, b.state.cov)
        assert a.residual == b.residual


def test_loaded_tree_passes_audit(small_run):
    env, sys_, params, res = small_run
    _, tree = _load(dumps_tree(res.tree, params, 1), env, sys_)
    assert tree.nodes[1].edge_mean is None
    assert audit_tree(tree, env, sys_, params)


def test_audit_flags_tampered_ledger_in_dump(small_run):
    env, sys_, params, res = small_run
    lines = dumps_tree(res.tree, params, 1).splitlines()
    rec = json.loads(lines[3])
    rec["delta"][0][0] *= 1.0 + 1e-9
    lines[3] = json.dumps(rec)
    _, tree = _load("\n".join(lines), env, sys_)
    out = audit_tree(tree, env, sys_, params)
    assert not out and out.message.startswith(f"node {rec['id']}")


@pytest.mark.parametrize("mutate", [
    lambda ls: [],
    lambda ls: ls[:-1],
    lambda ls: ["{not json"] + ls[1:],
    lambda ls: [ls[0].replace("drrrt-tree", "other")] + ls[1:],
    lambda ls: ls[:1] + [ls[1].replace('"cov"', '"covariance"')] + ls[2:],
    lambda ls: ls[:2] + [json.dumps({**json.loads(ls[2]), "delta": [[0.0]]})] + ls[3:],
])
def test_malformed_dumps_rejected(small_run, mutate):
    env, sys_, params, res = small_run
    lines = dumps_tree(res.tree, params, 1).splitlines()
    with pytest.raises(TreeFormatError):
        _load("\n".join(mutate(lines)), env, sys_)


def test_ellipse_params():
    w, h, ang = ellipse_params(np.diag([4.0, 1.0]))
    assert (w, h) == (4.0, 2.0) and ang % 180 == pytest.approx(0.0)
    w, h, ang = ellipse_params(np.diag([1.0, 9.0]), nsig=2)
    assert (w, h) == (12.0, 4.0) and ang % 180 == pytest.approx(90.0)


def test_polygon_slice_of_box():
    P = Polytope.box([1, 2], [3, 5], 4)
    pts = polygon_2d(P)
    assert pts.shape == (4, 2)
    assert sorted(map(tuple, np.round(pts, 12))) == [(1, 2), (1, 5), (3, 2), (3, 5)]
    # an empty slice yields no vertices
    assert polygon_2d(Polytope([[1, 0], [-1, 0]], [0, -1])).shape == (0, 2)


def test_svg_is_valid_and_stable(small_run, tmp_path):
    env, sys_, params, res = small_run
    paths = [tmp_path / "a.svg", tmp_path / "b.svg"]
    for p in paths:
        save_svg(tree_figure(res.tree, env, sys_, params, res.best_path, title="t"), p)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    root = ET.parse(paths[0]).getroot()
    assert root.tag.endswith("svg")
