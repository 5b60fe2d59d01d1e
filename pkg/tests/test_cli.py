"""Spec language parsing, printing and command dispatch."""

import io
import json
import contextlib
import subprocess
import sys

import pytest

from valzeta import cli
from valzeta import formula as fm
from valzeta import vfrag as vf
from valzeta.grothring import ResClass
from valzeta.presburger import PresburgerSet


def capture(args):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = cli.main(args)
    return code, out.getvalue(), err.getvalue()


ODD = "set D { x >= 0 and x == 1 (mod 2) }"
DISC = "set O { x >= 0 }\nweight lin { kappa 1: x1; }"


def test_parse_single_cell_set():
    doc = cli.parse_spec(ODD)
    d = doc["D"]
    assert d.arity == 1 and len(d.pset.cells) == 1
    assert all(d.pset.contains((k,)) for k in (1, 3, 5))
    assert not any(d.pset.contains((k,)) for k in (-1, 0, 2))


def test_syntax_error_location():
    with pytest.raises(cli.ParseError) as exc:
        cli.parse_spec("set D { x >= }")
    err = exc.value
    assert (err.line, err.col) == (1, 14)  # the offending '}'
    assert err.expected


def test_bad_toplevel_and_duplicates():
    with pytest.raises(cli.ParseError) as exc:
        cli.parse_spec("sets D { x >= 0 }")
    assert "'set'" in exc.value.expected
    with pytest.raises(cli.ParseError, match="duplicate"):
        cli.parse_spec("set D { x >= 0 } set D { x >= 1 }")
    with pytest.raises(cli.ParseError, match="not bound"):
        cli.parse_spec("set D { t >= 0 }")
    with pytest.raises(cli.ParseError, match="integer coefficients"):
        cli.parse_spec("set D { 1/2*x == 0 (mod 3) }")


def test_unknown_characters_rejected():
    with pytest.raises(cli.ParseError, match="unexpected character"):
        cli.parse_spec("set D { x % 2 }")


def test_quantifier_scoping():
    doc = cli.parse_spec("set E { exists s. exists t. x - s - 2*t == 0 and s >= 0 and t >= 0 }")
    pset = doc["E"].pset
    assert all(pset.contains((k,)) for k in (0, 1, 2, 3, 7))
    assert not pset.contains((-1,))
    # shadowing: the bound x hides the free alias
    doc2 = cli.parse_spec("set F { exists x. x - x1 == 0 and x >= 5 }")
    assert doc2["F"].pset.contains((6,)) and not doc2["F"].pset.contains((4,))


def test_qe_output_reparses_to_same_set():
    doc = cli.parse_spec("set E { exists t. x - 2*t == 0 and x >= 0 }")
    res = cli.run(["qe", "E"], doc)
    back = cli.parse_spec("set Q { %s }" % res.payload["formula"])
    assert back["Q"].pset.equivalent(doc["E"].pset)
    assert res.payload["cells"] == len(doc["E"].pset.cells)


def test_euler_matches_ray_example():
    doc = cli.parse_spec("set R { x > 0 }")
    res = cli.run(["euler", "R"], doc)
    assert res.payload == {"chi_g": -1, "chi_b": 0, "class": "X"}
    assert res.human[0] == '{"chi_g": -1, "chi_b": 0, "class": "X"}'
    with pytest.raises(cli.CommandError, match="congruence"):
        cli.run(["euler", "D"], cli.parse_spec(ODD))


def test_round_trip_document():
    text = """
    set D { x >= 0 and x == 1 (mod 2) }
    set E { exists t. (x - 2*t == 0) or not (y >= 3) }
    set F { 1/2*x - 3*y + 7/3 >= 0 }
    region disc {
      strata { zeros []; gamma { x >= 1 and y >= 0 }; fiber u^2; }
      strata { zeros [2]; gamma { x >= 1 }; fiber u; }
      strata { zeros [1, 2]; gamma { }; fiber 1; }
    }
    region mixed {
      strata { zeros []; gamma { x >= 0 and y >= x }; fiber uv; }
      strata { zeros [1]; gamma { x >= 0 }; fiber 2u - v; }
      strata { zeros [2]; gamma { x >= 0 }; fiber v; }
      strata { zeros [1, 2]; gamma { }; fiber 1; }
    }
    weight W { kappa 1: 2*x1 + x2; kappa 2: x1; omega: x1 - 1; }
    weight H { kappa 1: 1/2*x1; }
    """
    doc = cli.parse_spec(text)
    printed = cli.print_spec(doc)
    doc2 = cli.parse_spec(printed)
    assert doc == doc2
    assert cli.print_spec(doc2) == printed  # printing is idempotent


def test_fiber_patterns():
    doc = cli.parse_spec(
        """
        region R {
          strata { zeros []; gamma { x >= 0 and y >= 0 }; fiber u^2; }
          strata { zeros [1]; gamma { x >= 0 }; fiber v; }
          strata { zeros [2]; gamma { x >= 0 }; fiber 2u; }
          strata { zeros [1, 2]; gamma { }; fiber 1; }
        }
        """
    )
    strata = {tuple(s.zeros): s for s in doc["R"].strata}
    assert strata[()].pattern == (vf.UNIT, vf.UNIT)
    assert strata[(0,)].pattern == (vf.ONE,)
    assert strata[(1,)].pattern is None  # coefficient 2 is not enumerable
    assert strata[(0, 1)].pattern == ()
    assert strata[(1,)].res == ResClass.monomial(1, 1, 2)


def test_region_validation_becomes_parse_error():
    with pytest.raises(cli.ParseError, match="region"):
        cli.parse_spec(
            "region R { strata { zeros []; gamma { x >= 0 }; fiber u^2; } }"
        )  # grade mismatch
    with pytest.raises(cli.ParseError, match="region"):
        cli.parse_spec(
            "region R { strata { zeros []; gamma { x <= 0 }; fiber u; } }"
        )  # unbounded below
    with pytest.raises(cli.ParseError, match="zeros entries"):
        cli.parse_spec("region R { strata { zeros [0]; gamma { }; fiber 1; } }")


def test_weight_clause_ordering():
    with pytest.raises(cli.ParseError, match="kappa indices"):
        cli.parse_spec("weight W { kappa 2: x1; }")
    with pytest.raises(cli.ParseError, match="precede omega"):
        cli.parse_spec("weight W { omega: x1; kappa 1: x1; }")
    with pytest.raises(cli.ParseError, match="omega given twice"):
        cli.parse_spec("weight W { omega: x1; omega: x2; }")


def test_zeta_command_unit_disc():
    doc = cli.parse_spec(DISC)
    res = cli.run(["zeta", "O", "lin"], doc)
    assert res.human[0] == "(q - 1) / (1 - q^-1 T)"
    direct = vf.zeta(vf.unit_polydisc(1), vf.ValWeight.monomial(1, [(1,)]))
    assert res.payload["zeta"] == str(direct)
    res2 = cli.run(["zeta", "O", "lin"], doc, {"rho": 2})
    assert res2.payload["zeta"] == str(
        vf.zeta(vf.unit_polydisc(1), vf.ValWeight.monomial(1, [(1,)]), rho=2)
    )
    res3 = cli.run(["zeta", "O"], doc, {"classical": True})
    assert res3.payload["normalization"] == "classical"
    assert res3.human[0] == "1"


def test_sum_and_class_commands():
    doc = cli.parse_spec(DISC)
    assert cli.run(["sum", "O"], doc).human[0] == "1 / (1 - T)"
    res = cli.run(["class", "O"], doc)
    assert res.payload["grades"]["1"]["residue_total"] == "u"
    doc2 = cli.parse_spec("set P { x >= 0 and y >= 0 }")
    res2 = cli.run(["class", "P"], doc2)
    assert res2.payload["grades"]["2"]["residue_total"] == "u^2"


def test_fubini_command():
    doc = cli.parse_spec(
        "set T { x >= 0 and y >= x }\nweight w { kappa 1: x1 + x2; }"
    )
    res = cli.run(["fubini-check", "T", "w"], doc)
    assert res.ok and res.payload["orders"] == 2 and res.payload["all_equal"]
    doc3 = cli.parse_spec("set C { x >= 0 and y >= x and z >= y }")
    res3 = cli.run(["fubini-check", "C"], doc3)
    assert res3.ok and res3.payload["orders"] == 6


def test_cov_command_self_certifies():
    doc = cli.parse_spec("set T { x >= 0 and y >= 0 }\nweight om { omega: x1; }")
    res = cli.run(["cov-check", "T", "om"], doc, {"matrix": "1 0; 1 1", "units": "0 2"})
    assert res.ok and res.payload["zeta_equal"] and res.payload["measure_preserving"]
    with pytest.raises(cli.CommandError, match="unimodular"):
        cli.run(["cov-check", "T", "om"], doc, {"matrix": "2 0; 0 1"})


def test_cov_command_rejects_wrong_claim():
    doc = cli.parse_spec(
        "set T { x >= 0 and y >= 0 }\n"
        "weight om { omega: x1; }\n"
        "weight bad { omega: 3*x1 + 7; }"
    )
    res = cli.run(["cov-check", "T", "om", "bad"], doc, {"matrix": "1 0; 1 1"})
    assert not res.ok
    assert not res.payload["measure_preserving"]
    assert res.payload["witness"] is not None


def test_family_command_certifies_scaling():
    doc = cli.parse_spec(DISC)
    res = cli.run(["family", "O", "lin"], doc, {"rho_list": [1, 2, 4]})
    assert res.ok
    assert res.payload["scaling_certified"] and res.payload["matches_direct"]
    for r in (1, 2, 4):
        assert res.payload["per_rho"][str(r)]["matches_direct"]
    levels = {(e["level"], tuple(e["residues"])) for e in res.payload["entries"]}
    assert (1, (1,)) in levels and (4, (3,)) in levels
    # the even residue at rho 4 folds back to the level-2 primitive
    assert (2, (1,)) in levels and (4, (2,)) not in levels


def test_oracle_command():
    doc = cli.parse_spec(DISC)
    res = cli.run(
        ["oracle-check", "O", "lin"], doc, {"p": 3, "precision": 6, "kappa": (1,)}
    )
    assert res.ok and res.payload["verdict"]
    assert res.payload["symbolic"] == "9/4"
    with pytest.raises(cli.CommandError, match="kappa"):
        cli.run(["oracle-check", "O", "lin"], doc, {"p": 3})
    with pytest.raises(cli.CommandError, match="--p"):
        cli.run(["oracle-check", "O", "lin"], doc, {"kappa": (1,)})
    with pytest.raises(cli.CommandError, match="diverges"):
        cli.run(
            ["oracle-check", "O", "lin"], doc, {"p": 3, "kappa": (-1,), "precision": 4}
        )


def test_run_rejects_unknown_commands_and_names():
    doc = cli.parse_spec(DISC)
    with pytest.raises(cli.CommandError, match="unknown command"):
        cli.run(["frobnicate", "O"], doc)
    with pytest.raises(cli.CommandError, match="unknown name"):
        cli.run(["zeta", "Nope"], doc)
    with pytest.raises(cli.CommandError, match="not a weight"):
        cli.run(["zeta", "O", "O"], doc)
    with pytest.raises(cli.CommandError, match="not a set"):
        cli.run(
            ["sum", "R"],
            cli.parse_spec("region R { strata { zeros [1]; gamma { }; fiber 1; } }"),
        )


def test_exit_codes():
    assert capture(["--spec", DISC, "zeta", "O", "lin"])[0] == 0
    assert capture(["--spec", "set O { x >= }", "zeta", "O"])[0] == 2
    assert capture(["--spec", DISC, "zeta", "Nope"])[0] == 3
    bad = (
        "set T { x >= 0 and y >= 0 }\nweight om { omega: x1; }\n"
        "weight bad { omega: 3*x1 + 7; }"
    )
    code, out, _ = capture(
        ["--spec", bad, "cov-check", "T", "om", "bad", "--matrix", "1 0; 1 1"]
    )
    assert code == 4 and "VIOLATED" in out


def test_main_json_and_decimal_output():
    code, out, _ = capture(["--spec", DISC, "--json", "euler", "O"])
    assert code == 0
    blob = json.loads(out)
    assert blob["result"] == {"chi_g": 0, "chi_b": 1, "class": "1+X"}
    assert blob["ok"] is True
    code, out, _ = capture(
        [
            "--spec", DISC, "oracle-check", "O", "lin",
            "--p", "3", "--kappa", "1", "--precision", "6", "--decimal", "4",
        ]
    )
    assert code == 0 and "(2.2500)" in out


def test_precision_env_default(monkeypatch):
    monkeypatch.setenv("VALZETA_PRECISION", "5")
    code, out, _ = capture(
        ["--spec", DISC, "--json", "oracle-check", "O", "lin", "--p", "3", "--kappa", "1"]
    )
    assert code == 0
    assert json.loads(out)["result"]["precision"] == 5


def test_file_input(tmp_path):
    f = tmp_path / "doc.vz"
    f.write_text(DISC, encoding="utf-8")
    code, out, _ = capture(["--file", str(f), "zeta", "O", "lin"])
    assert code == 0 and out.strip() == "(q - 1) / (1 - q^-1 T)"
    code, _, err = capture(["--file", str(tmp_path / "missing"), "zeta", "O"])
    assert code == 3 and "error" in err


def test_output_stable_across_hash_seeds():
    cmd = [
        sys.executable, "-m", "valzeta.cli",
        "--spec", "set T { x >= 0 and y >= x }\nweight w { kappa 1: x1 + x2; }",
        "--json", "family", "T", "w", "--rho-list", "1,2",
    ]
    runs = []
    for seed in ("0", "271828"):
        proc = subprocess.run(
            cmd, capture_output=True, text=True, env={"PYTHONHASHSEED": seed, "PATH": ""},
        )
        assert proc.returncode == 0, proc.stderr
        runs.append(proc.stdout)
    assert runs[0] == runs[1]


def test_comments_and_whitespace():
    doc = cli.parse_spec("# leading note\nset D {\n  x >= 0 # inline\n}\n")
    assert doc["D"].pset.contains((0,))


def test_formula_printer_precedence():
    f = fm.Or(
        (
            fm.And((fm.Cmp(fm.term([1], 0), ">="), fm.Cmp(fm.term([1], -1), ">"))),
            fm.Not(fm.Or((fm.Cmp(fm.term([-1], 0), ">="), fm.Cmp(fm.term([1], -5), "==")))),
        )
    )
    text, _ = cli._formula_str(f, 1)
    doc = cli.parse_spec("set S { %s }" % text)
    assert doc["S"].formula == f
