import pytest

from prflow import dimacs
from prflow.errors import DimacsFormatError
from prflow.harness import generate_instance

GOOD = """\
c tiny two-path instance
p max 4 4
n 1 s
n 4 t
a 1 2 1
a 1 3 1
a 2 4 1
a 3 4 1
"""


def test_read_basic():
    g = dimacs.loads(GOOD)
    assert g.n == 4 and g.m == 4
    assert g.s == 0 and g.t == 3
    assert (g.cap_bwd == 0).all()
    assert (g.cap_fwd == 1).all()


def test_read_skips_zero_capacity_arcs():
    g = dimacs.loads(GOOD + "a 2 3 0\n")
    assert g.m == 4


def test_roundtrip_two_sided_becomes_arc_pairs():
    g = generate_instance("unit-random", 10, 20, seed=7)
    text = dimacs.dumps(g)
    g2 = dimacs.loads(text)
    # each symmetric edge splits into an antiparallel pair of one-way arcs
    assert g2.m == 2 * g.m
    assert g2.n == g.n and g2.s == g.s and g2.t == g.t


def test_dumps_is_deterministic():
    g = generate_instance("grid", 16, 24, seed=5)
    assert dimacs.dumps(g) == dimacs.dumps(g)


@pytest.mark.parametrize("text", [
    "a 1 2 1\n",                              # arc before problem line
    "p max 4 4\np max 4 4\n",                 # duplicate problem line
    "p min 4 4\n",                            # wrong problem kind
    "p max 4\n",                              # short problem line
    "p max 4 4\nn 1 s\nn 4 t\na 1 2\n",       # short arc line
    "p max 4 4\nn 1 s\nn 4 t\na 1 9 1\n",     # endpoint out of range
    "p max 4 4\nn 1 s\nn 4 t\na 1 2 -3\n",    # negative capacity
    "p max 4 4\nn 1 s\nn 1 s\n",              # duplicate source
    "p max 4 4\nn 1 s\na 1 2 1\n",            # missing sink
    "p max 4 4\nn 1 q\n",                     # bad designator
    "p max 4 4\nn one s\n",                   # non-integer id
    "x 1 2\n",                                # unknown line type
    "",                                       # empty file
])
def test_malformed_inputs_rejected(text):
    with pytest.raises(DimacsFormatError):
        dimacs.loads(text)


def test_comment_lines_ignored():
    g = dimacs.loads("c hello\nc world\n" + GOOD)
    assert g.m == 4


def test_writer_emits_comment(tmp_path):
    g = generate_instance("parallel-paths", 5, 6, seed=0)
    path = tmp_path / "inst.dimacs"
    dimacs.write_dimacs(g, str(path), comment="three paths")
    text = path.read_text()
    assert text.startswith("c three paths\n")
    assert dimacs.read_dimacs(str(path)).n == g.n
