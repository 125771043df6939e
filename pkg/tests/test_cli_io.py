"""Configuration parsing, snapshots and the command-line entry point."""

import csv
import json
import sys
import textwrap

import numpy as np
import pytest

from dnslab import PERIODIC, Grid, Params, PrimitiveState
from dnslab.cli import main
from dnslab.config import SCHEMA, build_initial_state, parse_config, write_resolved
from dnslab.errors import ConfigError, SnapshotError
from dnslab.reform import to_reform
from dnslab.snapshot import encode_snapshot, inspect_snapshot, load_snapshot, save_snapshot

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

P = Params(A=1.0, gamma=2.0, delta=0.5, alpha=1.0, beta=0.0)


def write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


EQUILIBRIUM = """
T = 0.01
[params]
gamma = 2.0
delta = 0.5
[grid]
n = 32
[init]
family = "equilibrium"
rho_mean = 0.7
[picard]
dt = 1e-3
steps_per_slab = 5
[output]
cadence = 2
formats = ["csv"]
"""

SINE = """
T = 0.01
seed = 7
[params]
gamma = 2.0
delta = 0.5
[grid]
n = 64
[init]
family = "random_modes"
rho_amp = 0.1
u_amp = 0.1
[momentum]
theta = 0.5
rtol = 1e-12
[picard]
dt = 1e-3
steps_per_slab = 5
[output]
cadence = 2
formats = ["csv"]
"""


class TestParseConfig:
    def test_minimal_defaults(self):
        cfg = parse_config("[params]\ngamma = 2.0\n")
        assert cfg.params.gamma == 2.0 and cfg.params.delta == Params().delta
        assert cfg.grid.shape == (SCHEMA["grid"]["n"],)
        assert cfg.picard.k_max == SCHEMA["picard"]["k_max"]
        assert cfg.output.cadence == SCHEMA["output"]["cadence"]
        assert cfg.T == 0.1 and cfg.seed == 0

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("[params]\ngama = 2.0\n")
        assert "unknown key: gama (in [params])" in exc.value.problems

    def test_unknown_block(self):
        with pytest.raises(ConfigError, match="unknown key: solver"):
            parse_config("[solver]\nx = 1\n")

    def test_params_constraint_named(self):
        with pytest.raises(ConfigError, match="gamma must exceed 1"):
            parse_config("[params]\ngamma = 0.9\n")

    def test_problems_listed_exhaustively(self):
        text = "T = -1\n[params]\ngamma = 0.9\ndelta = 1.5\ngama = 3\n[output]\ncadence = 0\n[init]\nfamily = 'blob'\n"
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        probs = "\n".join(exc.value.problems)
        for frag in ("gama", "gamma must exceed 1", "delta must lie", "cadence", "family", "T must be positive"):
            assert frag in probs

    def test_parse_error_has_position(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config("[params]\ngamma = = 2\n")

    def test_missing_snapshot_path(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            parse_config(write(tmp_path, "[init]\nfamily = 'snapshot'\npath = 'nope.dnsnap'\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            parse_config(tmp_path / "absent.toml")

    def test_resolved_config_round_trip(self, tmp_path):
        cfg = parse_config(EQUILIBRIUM)
        path = write_resolved(cfg, tmp_path)
        doc = tomllib.loads(path.read_text())
        assert set(doc["picard"]) >= {"dt", "k_max", "nu", "safety"}
        assert doc["init"]["rho_mean"] == 0.7
        again = parse_config(path)
        assert again.resolved() == cfg.resolved()

    def test_random_modes_seeded(self):
        a = build_initial_state(parse_config(SINE))
        b = build_initial_state(parse_config(SINE))
        c = build_initial_state(parse_config(SINE.replace("seed = 7", "seed = 8")))
        np.testing.assert_array_equal(a.rho, b.rho)
        assert not np.array_equal(a.rho, c.rho)


def sample_state(n=16):
    g = Grid.uniform(1, n, 1.0, PERIODIC)
    x = g.coords[0]
    return PrimitiveState(g, 1 + 0.3 * np.sin(2 * np.pi * x), (0.2 * np.cos(2 * np.pi * x))[None], t=0.25)


class TestSnapshot:
    @pytest.mark.parametrize("kind", ["primitive", "reform"])
    def test_save_load_save_identical(self, tmp_path, kind):
        s = sample_state()
        if kind == "reform":
            s = to_reform(s, P)
        first = save_snapshot(s, P, tmp_path / "a.dnsnap")
        loaded, params, header = load_snapshot(first)
        second = save_snapshot(loaded, params, tmp_path / "b.dnsnap")
        assert first.read_bytes() == second.read_bytes()
        assert params == P and loaded.t == 0.25 and header["kind"] == kind

    def test_lossless_fields(self, tmp_path):
        s = sample_state()
        loaded, _, _ = load_snapshot(save_snapshot(s, P, tmp_path / "a.dnsnap"))
        np.testing.assert_array_equal(loaded.rho, s.rho)
        np.testing.assert_array_equal(loaded.u, s.u)

    def test_grid_mismatch(self, tmp_path):
        path = save_snapshot(sample_state(16), P, tmp_path / "a.dnsnap")
        with pytest.raises(SnapshotError, match="does not match"):
            load_snapshot(path, grid=Grid.uniform(1, 32))

    def test_checksum_failure(self, tmp_path):
        path = save_snapshot(sample_state(), P, tmp_path / "a.dnsnap")
        data = bytearray(path.read_bytes())
        data[-1] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(SnapshotError, match="checksum"):
            load_snapshot(path)

    def test_version_mismatch(self, tmp_path):
        data = bytearray(encode_snapshot(sample_state(), P))
        data[8:12] = (99).to_bytes(4, "little")
        path = tmp_path / "v.dnsnap"
        path.write_bytes(bytes(data))
        with pytest.raises(SnapshotError, match="version 99"):
            load_snapshot(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.dnsnap"
        path.write_bytes(b"NOTASNAP" + bytes(32))
        with pytest.raises(SnapshotError, match="magic"):
            inspect_snapshot(path)

    def test_inspect_header_only(self, tmp_path):
        path = save_snapshot(sample_state(), P, tmp_path / "a.dnsnap")
        data = path.read_bytes()
        # drop the payload entirely; inspection must still succeed
        header = json.loads(data[20 : 20 + int.from_bytes(data[12:20], "little")])
        path.write_bytes(data[: 20 + len(json.dumps(header, sort_keys=True, separators=(",", ":")))])
        info = inspect_snapshot(path)
        assert [f["name"] for f in info["fields"]] == ["rho", "u"]
        assert info["endianness"] == "little" and info["fields"][1]["shape"] == [1, 16]

    def test_snapshot_initial_family(self, tmp_path):
        s = sample_state(32)
        save_snapshot(s, P, tmp_path / "init.dnsnap")
        cfg = parse_config(write(tmp_path, "[grid]\nn = 32\n[init]\nfamily = 'snapshot'\npath = 'init.dnsnap'\n"))
        np.testing.assert_array_equal(build_initial_state(cfg).rho, s.rho)


class TestCli:
    def test_check_init_finite(self, tmp_path, capsys):
        cfg = write(tmp_path, "[params]\ngamma = 1.5\ndelta = 0.9\n[init]\nfamily = 'power_law'\na_exp = 2.0\n")
        assert main(["check-init", str(cfg), "--output-dir", str(tmp_path / "out")]) == 0
        report = json.loads((tmp_path / "out" / "admissibility.json").read_text())
        assert report["overall"] == "Finite"

    def test_check_init_diverging_names_norm(self, tmp_path, capsys):
        cfg = write(tmp_path, "[params]\ngamma = 1.5\ndelta = 0.9\n[init]\nfamily = 'power_law'\na_exp = 1.0\n")
        assert main(["check-init", "--config", str(cfg), "--output-dir", str(tmp_path / "out")]) == 1
        out = capsys.readouterr().out
        assert "failing norms:" in out and "Diverging" in out

    def test_run_equilibrium_constant_rows(self, tmp_path):
        out = tmp_path / "out"
        assert main(["run", str(write(tmp_path, EQUILIBRIUM)), "--output-dir", str(out)]) == 0
        rows = read_csv(out / "diagnostics.csv")
        assert len(rows) == 6
        for col in ("m", "M_x", "Ek", "E", "D", "sup_u", "min_rho", "phi_H3"):
            assert len({r[col] for r in rows}) == 1, col
        assert (out / "resolved_config.toml").exists()
        assert (out / "convergence_log.csv").exists()

    def test_metadata_flags_boundary_treatment(self, tmp_path):
        assert main(["run", str(write(tmp_path, EQUILIBRIUM)), "--output-dir", str(tmp_path / "p")]) == 0
        meta = json.loads((tmp_path / "p" / "run_metadata.json").read_text())
        assert meta["velocity_boundary"] == "periodic" and "boundary_flux" not in meta
        text = EQUILIBRIUM.replace("n = 32", "n = 32\nlength = 8.0\nboundary = 'farfield'")
        assert main(["run", str(write(tmp_path, text)), "--output-dir", str(tmp_path / "f")]) == 0
        meta = json.loads((tmp_path / "f" / "run_metadata.json").read_text())
        assert meta["velocity_boundary"].startswith("Dirichlet")
        assert meta["box_lengths"] == [8.0] and len(meta["boundary_flux"]) == 6

    def test_bad_config_exit_2(self, tmp_path, capsys):
        assert main(["run", str(write(tmp_path, "[params]\ngama = 2\n")), "--output-dir", str(tmp_path)]) == 2
        assert "unknown key: gama" in capsys.readouterr().err

    def test_missing_config_exit_2(self):
        assert main(["run"]) == 2

    def test_unknown_invariant_exit_2(self, tmp_path):
        assert main(["run", str(write(tmp_path, EQUILIBRIUM)), "--fatal-invariants", "bogus"]) == 2

    def test_output_precedence(self, tmp_path, monkeypatch):
        cfg = write(tmp_path, EQUILIBRIUM + f'directory = "{tmp_path / "from_config"}"\n')
        monkeypatch.setenv("DNSLAB_OUTPUT", str(tmp_path / "from_env"))
        assert main(["run", str(cfg)]) == 0
        assert (tmp_path / "from_env" / "diagnostics.csv").exists()
        assert not (tmp_path / "from_config").exists()
        assert main(["run", str(cfg), "--output-dir", str(tmp_path / "from_flag")]) == 0
        assert (tmp_path / "from_flag" / "diagnostics.csv").exists()
        monkeypatch.delenv("DNSLAB_OUTPUT")
        assert main(["run", str(cfg)]) == 0
        assert (tmp_path / "from_config" / "diagnostics.csv").exists()

    def test_deterministic_csv(self, tmp_path):
        cfg = write(tmp_path, SINE)
        main(["run", str(cfg), "--output-dir", str(tmp_path / "a")])
        main(["run", str(cfg), "--output-dir", str(tmp_path / "b")])
        assert (tmp_path / "a" / "diagnostics.csv").read_bytes() == (tmp_path / "b" / "diagnostics.csv").read_bytes()

    def test_fatal_invariant_exit_3(self, tmp_path):
        # k_max = 2 with an unreachable tolerance leaves every slab unconverged
        text = SINE.replace("steps_per_slab = 5", "steps_per_slab = 5\nk_max = 2\ntol = 1e-300")
        cfg = write(tmp_path, text)
        assert main(["run", str(cfg), "--output-dir", str(tmp_path / "w")]) == 0
        assert main(["run", str(cfg), "--output-dir", str(tmp_path / "f"), "--fatal-invariants", "contraction"]) == 3

    def test_snapshots_written(self, tmp_path):
        cfg = write(tmp_path, EQUILIBRIUM.replace('formats = ["csv"]', 'formats = ["snapshot"]\nsnapshot_every = 2'))
        assert main(["run", str(cfg), "--output-dir", str(tmp_path / "o")]) == 0
        names = sorted(p.name for p in (tmp_path / "o").glob("*.dnsnap"))
        assert names == ["snapshot_000000.dnsnap", "snapshot_000004.dnsnap", "snapshot_000008.dnsnap", "snapshot_000010.dnsnap"]
        state, params, _ = load_snapshot(tmp_path / "o" / names[-1])
        assert state.t == pytest.approx(0.01)

    def test_oracle_transport_table(self, tmp_path):
        cfg = write(tmp_path, "[oracle]\nlevels = [32, 64]\nT = 0.05\nmethods = ['Upwind1']\n")
        assert main(["oracle-transport", str(cfg), "--output-dir", str(tmp_path / "o")]) == 0
        rows = read_csv(tmp_path / "o" / "transport_errors.csv")
        assert len(rows) == 8
        assert len(read_csv(tmp_path / "o" / "transport_orders.csv")) == 4

    def test_continuation_table(self, tmp_path):
        text = """
        T = 0.004
        [params]
        gamma = 2.0
        delta = 0.5
        [grid]
        n = 32
        length = 8.0
        boundary = "farfield"
        [init]
        family = "power_law"
        [momentum]
        theta = 0.5
        [picard]
        dt = 2e-3
        steps_per_slab = 2
        monitors = false
        [continuation]
        eps = [1e-2, 1e-3]
        eta = [1e-1]
        """
        assert main(["continuation", str(write(tmp_path, text)), "--output-dir", str(tmp_path / "o")]) == 0
        rows = read_csv(tmp_path / "o" / "continuation.csv")
        assert [r["stage"] for r in rows] == ["eps", "eps", "eta"]

    def test_convergence_table(self, tmp_path):
        text = SINE + "[convergence]\nlevels = [16, 32, 64]\nT = 0.004\n"
        assert main(["convergence", str(write(tmp_path, text)), "--output-dir", str(tmp_path / "o")]) == 0
        rows = read_csv(tmp_path / "o" / "convergence_orders.csv")
        assert [int(r["n"]) for r in rows] == [16, 32]
