import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings

from tokunaga.cli import ConfigError, RunConfig, main, run, tokunaga_csv
from tokunaga.newick import (
    NewickSyntaxError,
    NotRepresentableError,
    UnsupportedArityError,
    emit_newick,
    parse_newick,
    parse_newick_many,
)
from tokunaga.params import CriticalTokunaga
from tokunaga.sampler import sample_trees
from tokunaga.stats import estimate_tokunaga
from tokunaga.tree import Tree, branch_statistics, canonical_code, compute_orders

from .strategies import trees


def test_parse_examples():
    assert canonical_code(parse_newick("(x,x);")) == "(L,L)"
    assert canonical_code(parse_newick("x;")) == "L"
    t = parse_newick("((x,x),x);")
    ot = compute_orders(t)
    assert ot.tree_order == 2
    assert branch_statistics(ot).N_side == {(1, 2): 1}


def test_labels_lengths_comments():
    t, L = parse_newick("((a:1,'b, c':2)[note]in:3, x:0.5)root:0.25;", keep_lengths=True)
    assert canonical_code(t) == "((L,L),L)"
    assert L[1] == 0.25 and np.isnan(L[0])
    assert sorted(L[2:].tolist()) == [0.5, 1, 2, 3]


@pytest.mark.parametrize(
    "text, err, pos",
    [
        ("(x,x)", NewickSyntaxError, 5),
        ("((x,x);", NewickSyntaxError, 6),
        ("(x,x));", NewickSyntaxError, 5),
        ("(x,x);junk", NewickSyntaxError, 6),
        ("(x:abc,x);", NewickSyntaxError, 3),
        (";", NewickSyntaxError, 0),
    ],
)
def test_syntax_errors(text, err, pos):
    with pytest.raises(err) as e:
        parse_newick(text)
    assert e.value.pos == pos


@pytest.mark.parametrize("text", ["(x);", "(x,x,x);", "((x),x);"])
def test_arity_errors(text):
    with pytest.raises(UnsupportedArityError):
        parse_newick(text)


def test_emit_examples():
    assert emit_newick(Tree.cherry()) == "(x,x);"
    assert emit_newick(Tree.single_edge()) == "x;"
    assert emit_newick(Tree.from_code("(L,(L,L))")) == emit_newick(Tree.from_code("((L,L),L)"))
    with pytest.raises(NotRepresentableError):
        emit_newick(Tree.empty())


@given(trees)
@settings(max_examples=150, deadline=None)
def test_roundtrip(t):
    assert canonical_code(parse_newick(emit_newick(t))) == canonical_code(t)


def test_roundtrip_generated(rng):
    for t in sample_trees(CriticalTokunaga(2), 200, rng, max_order=6):
        assert canonical_code(parse_newick(emit_newick(t))) == canonical_code(t)


def test_many():
    ts = parse_newick_many("(x,x);\n x;\n((x,x),(x,x));\n")
    assert [compute_orders(t).tree_order for t in ts] == [2, 1, 3]


# --- CLI -------------------------------------------------------------------

def _run(argv, capsys):
    status = main(argv)
    return status, capsys.readouterr().out


def test_invariance_cli(capsys):
    status, out = _run(["invariance", "--c", "2", "--kmax", "40"], capsys)
    rep = json.loads(out)
    assert status == 0 and rep["result"]["residual"] < 1e-9
    assert rep["config"]["Kmax"] == 40 and rep["version"]
    status, out = _run(["invariance", "--tok", "1,1,1", "--p", "0.5"], capsys)
    assert status == 1 and json.loads(out)["result"]["residual"] > 1e-3


def test_generate_deterministic(capsys):
    _, a = _run(["generate", "--c", "2", "--n", "1000", "--seed", "7"], capsys)
    _, b = _run(["generate", "--c", "2", "--n", "1000", "--seed", "7"], capsys)
    _, c = _run(["generate", "--c", "2", "--n", "1000", "--seed", "8"], capsys)
    assert a == b and a != c
    assert len(json.loads(a)["result"]["orders"]) == 1000


def test_generate_newick(capsys):
    _, out = _run(["generate", "--c", "3", "--n", "5", "--order", "3", "--newick"], capsys)
    nw = json.loads(out)["result"]["newick"]
    assert all(compute_orders(parse_newick(s)).tree_order == 3 for s in nw)


def test_prune_cli(tmp_path, capsys):
    f = tmp_path / "t.nwk"
    f.write_text("((x,x),x);\n(((x,x),(x,x)),x);\n")
    status, out = _run(["prune", "--input", str(f)], capsys)
    rows = json.loads(out)["result"]["trees"]
    assert status == 0
    assert [r["pruned"] for r in rows] == ["x;", "(x,x);"]
    assert [r["order"] for r in rows] == [2, 3]


def test_stats_cli_csv(capsys, tmp_path):
    status, out = _run(["stats", "--c", "2", "--n", "300", "--order", "5", "--format", "csv", "--seed", "3"], capsys)
    assert status == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["i", "j=2", "j=3", "j=4", "j=5"]
    assert rows[2][1] == ""  # (2, 2) is undefined
    assert abs(float(rows[1][1]) - 1) < 0.15
    status, out = _run(["stats", "--c", "2", "--n", "50", "--order", "5"], capsys)
    rep = json.loads(out)["result"]
    assert "horton" in rep and "fit" in rep


def test_dynamics_cli(capsys):
    status, out = _run(["dynamics", "--c", "2", "--steps", "3", "--kmax", "20", "--empirical", "--n", "2000"], capsys)
    rep = json.loads(out)["result"]
    assert status == 0 and len(rep["x"]) == 20 and len(rep["empirical"]["x"]) == 10


def test_oracle_cli(capsys):
    status, out = _run(["oracle", "--tok", "1,0.5,2", "--p", "0.3", "--max-side", "2"], capsys)
    rep = json.loads(out)
    assert status == 0 and rep["result"]["prune_invariant"]


def test_config_errors(capsys):
    assert main(["invariance", "--c", "0.5"]) == 2
    assert main(["invariance", "--c", "2", "--tok", "1"]) == 2
    assert main(["generate", "--n", "0"]) == 2
    with pytest.raises(ConfigError):
        RunConfig("serve")
    assert "error" in capsys.readouterr().err


def test_run_embeds_config():
    text, status = run(RunConfig("invariance", CriticalTokunaga(3), Kmax=30))
    rep = json.loads(text)
    assert status == 0 and rep["config"]["params"] == {"kind": "critical", "c": "3"}


def test_csv_layout():
    tm = estimate_tokunaga([Tree.from_code("(L,(L,L))")])
    assert tokunaga_csv(tm) == "i,j=2\r\n1,1.0\r\n"
