import json

import pytest

from aniso_mfpt.scenario import ScenarioError, load_scenario, scenario_hash, validate_scenario

BASE = {"domain": {"shape": "disk", "R0": 1.0}, "physics": {"mu": 4.0, "sigma": 2.0}}


def test_minimal_scenario_and_derived_diffusivity():
    s = validate_scenario(BASE)
    assert s.D == 0.5
    assert s.kernel.orientation_kind == "isotropic"
    assert s.mc.N == 10_000 and s.mc.event_cap == 10**8 and s.fd.N1 == 257


def test_all_violations_are_reported_together():
    bad = {
        "domain": {"shape": "annulus", "R0": 1.0, "rho": 2.0, "boundary": {"inner": "reflecting",
                                                                          "outer": "reflecting"}},
        "kernel": {"alpha": 0.5, "orientation": "circular"},
        "physics": {"mu": 1.0, "sigma": 1.0},
        "mc": {"survival": {"start": [0, 0], "times": [0.5, 1.0]}},
    }
    with pytest.raises(ScenarioError) as exc:
        validate_scenario(bad)
    v = exc.value.violations
    assert any(x.startswith("domain.rho") for x in v)
    assert any("at least one boundary piece must be absorbing" in x for x in v)
    assert any("positive alpha means radial" in x for x in v)
    assert any(x.startswith("mc.survival.times") for x in v)
    assert len(v) == 4


def test_schema_errors_list_every_field():
    with pytest.raises(ScenarioError) as exc:
        validate_scenario({"domain": {"shape": "disk", "R0": -1, "extra": 1}, "physics": {"mu": 0, "sigma": 1},
                           "D": 0.5})
    v = exc.value.violations
    assert {x.split(":")[0] for x in v} == {"domain.R0", "domain.extra", "physics.mu", "D"}


@pytest.mark.parametrize("patch,needle", [
    ({"domain": {"shape": "rectangle"}}, "domain.bounds: required"),
    ({"domain": {"shape": "rectangle", "bounds": [1, 0, 0, 1]}}, "a < b"),
    ({"domain": {"shape": "disk", "R0": 1.0, "rho": 0.5}}, "only valid for an annulus"),
    ({"domain": {"shape": "disk", "R0": 1.0, "boundary": {"left": "absorbing"}}}, "unknown pieces"),
    ({"kernel": {"orientation": "fixed"}}, "kernel.gamma: required"),
    ({"kernel": {"orientation": "radial"}}, "needs k0 or alpha"),
    ({"kernel": {"k0": 1.0, "alpha": 0.3, "orientation": "radial"}}, "either k0 or alpha"),
    ({"kernel": {"orientation": "segments:missing.csv", "k0": 25, "d0": 0.02}}, "does not exist"),
    ({"kernel": {"orientation": "segments:x.csv"}}, "need a rectangle"),
    ({"kernel": {"orientation": "spiral"}}, "orientation must be one of"),
    ({"kernel": {"type": "gaussian"}}, "unknown kernel type"),
    ({"kernel": {"alpha": 1.0}}, "kernel.alpha"),
    ({"mc": {"starts": [[0, 0, "nan"]]}}, "theta0 must be finite"),
    ({"analytic": {"radii": []}}, "must not be empty"),
])
def test_individual_violations(patch, needle):
    doc = json.loads(json.dumps(BASE))
    doc.update(patch)
    with pytest.raises(ScenarioError) as exc:
        validate_scenario(doc)
    assert any(needle in v for v in exc.value.violations), exc.value.violations


def test_alpha_sign_infers_orientation():
    doc = dict(BASE, kernel={"alpha": -0.4})
    assert validate_scenario(doc).kernel.orientation_kind == "circular"
    doc = dict(BASE, kernel={"alpha": 0.4})
    assert validate_scenario(doc).kernel.orientation_kind == "radial"


def test_attachments_satisfy_file_references():
    doc = {"domain": {"shape": "rectangle", "bounds": [-1, 1, -1, 1]}, "physics": {"mu": 1, "sigma": 1},
           "kernel": {"orientation": "segments:lines.csv", "k0": 25, "d0": 0.02}}
    s = validate_scenario(doc, attachments={"lines.csv": b"0,0,1,1\n"})
    assert s.kernel.path == "lines.csv"


def test_hash_depends_on_content_not_workers():
    a = validate_scenario(dict(BASE, mc={"workers": 1}))
    b = validate_scenario(dict(BASE, mc={"workers": 8}))
    c = validate_scenario(dict(BASE, mc={"seed": 3}))
    assert scenario_hash(a) == scenario_hash(b) != scenario_hash(c)
    assert scenario_hash(a, {"f": b"1"}) != scenario_hash(a, {"f": b"2"})


def test_shipped_scenarios_validate(scenarios_dir):
    paths = sorted(scenarios_dir.glob("*.json"))
    assert len(paths) >= 10
    for p in paths:
        s, files = load_scenario(p)
        assert s.D > 0
        if s.kernel.path:
            assert s.kernel.path in files


def test_load_scenario_reports_bad_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{nope")
    with pytest.raises(ScenarioError, match="not valid JSON"):
        load_scenario(p)
