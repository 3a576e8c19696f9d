import json

import pytest

from evflare.cli import main
from evflare.dataset import synthetic_background
from evflare.events import read_events, write_events
from evflare.voxel import encode, read_voxels

from oracles import random_stream
from streams import telegraph_stream


@pytest.fixture
def pair(tmp_path, rng):
    a = random_stream(rng, 2000, (32, 24), (0, 40_000))
    b = random_stream(rng, 2000, (32, 24), (0, 40_000))
    write_events(a, tmp_path / "a.evt1")
    write_events(b, tmp_path / "b.evt1")
    return tmp_path, a, b


def test_synth_render_simulate_profile_fuse(tmp_path):
    d = str(tmp_path)
    assert main(["synth-script", "--seed", "3", "--duration", "30000", "--canvas", "48x32", "-o", f"{d}/s.json"]) == 0
    assert json.loads((tmp_path / "s.json").read_text())["duration"] == 30_000
    args = ["render-flare", "--script", f"{d}/s.json", "--canvas", "48x32"]
    assert main([*args, "--out-flare", f"{d}/f.ifr1", "--out-light", f"{d}/l.ifr1", "--dump-frames", f"{d}/png"]) == 0
    assert any((tmp_path / "png").iterdir())
    assert main(["simulate", f"{d}/f.ifr1", "-o", f"{d}/f.evt1", "--c", "0.2", "--window", "0,30000"]) == 0
    assert main(["simulate", f"{d}/l.ifr1", "-o", f"{d}/l.evt1", "--c", "0.2", "--window", "0,30000"]) == 0
    fl = read_events(tmp_path / "f.evt1")
    assert fl.window == (0, 30_000) and fl.geometry == (48, 32)
    assert main(["estimate-profile", f"{d}/f.evt1", "-o", f"{d}/pf.ifr1"]) == 0
    assert main(["fuse", f"{d}/f.evt1", f"{d}/l.evt1", "-o", f"{d}/fused.evt1", "--seed", "1"]) == 0
    assert main(["fuse", f"{d}/f.evt1", f"{d}/l.evt1", f"{d}/f.evt1", "-o", f"{d}/fused3.evt1", "--k", "1,2,1"]) == 0
    assert read_events(tmp_path / "fused.evt1").window == (0, 30_000)


def test_codec_filter_eval(pair, capsys):
    d, a, _ = pair
    assert main(["encode", f"{d}/a.evt1", "-o", f"{d}/a.vox1"]) == 0
    assert read_voxels(d / "a.vox1") == encode(a)
    assert main(["decode", f"{d}/a.vox1", "-o", f"{d}/a.csv", "--format", "csv"]) == 0
    # CSV carries no header metadata, so geometry and window are given on read
    assert encode(read_events(d / "a.csv", a.geometry, a.window)) == encode(a)
    for method in ("raw", "efr", "voxel"):
        assert main(["filter", f"{d}/a.evt1", "-o", f"{d}/{method}.evt1", "--method", method]) == 0
    assert read_events(d / "raw.evt1") == a
    capsys.readouterr()
    assert main(["eval", f"{d}/a.evt1", f"{d}/a.evt1", "--csv", f"{d}/r.csv"]) == 0
    assert "Chamfer" in capsys.readouterr().out
    assert (d / "r.csv").read_text().splitlines()[-1].startswith("mean")


def test_noise_mask_align(tmp_path, rng, capsys):
    d = str(tmp_path)
    ref = telegraph_stream(rng)
    write_events(ref, tmp_path / "ref.evt1")
    assert main(["inject-noise", f"{d}/ref.evt1", "-o", f"{d}/n.evt1", "--rate", "5", "--seed", "2"]) == 0
    assert len(read_events(tmp_path / "n.evt1")) > len(ref)
    assert main(["mask", f"{d}/ref.evt1", "-o", f"{d}/m.evt1", "--rect", "0,0,64,48"]) == 0
    assert len(read_events(tmp_path / "m.evt1")) == 0
    assert main(["mask", f"{d}/ref.evt1", "-o", f"{d}/m2.evt1", "--disc", "30,20,5", "--mode", "keep"]) == 0
    capsys.readouterr()
    assert main(["align", f"{d}/n.evt1", f"{d}/ref.evt1", "--apply", f"{d}/al.evt1", "--translate", "1,0"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["offset"] == 0 and res["confident"]


def test_make_dataset_and_bench(tmp_path, capsys):
    write_events(synthetic_background((48, 32), 120_000, seed=1), tmp_path / "bg.evt1")
    cfg = {
        "dataset": {
            "sources": [str(tmp_path / "bg.evt1")],
            "n_train": 1,
            "n_test": 1,
            "canvas": [48, 32],
            "window_range": [60_000, 60_000],
        }
    }
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert main(["make-dataset", "--config", str(tmp_path / "cfg.json"), "-o", str(tmp_path / "ds"), "--seed", "4"]) == 0
    assert json.loads(capsys.readouterr().out) == {"sequences": 2, "test": 3, "train": 3}
    assert json.loads((tmp_path / "ds" / "manifest.json").read_text())["config"]["seed"] == 4
    out = tmp_path / "raw.csv"
    assert main(["bench", str(tmp_path / "ds"), "--method", "raw", "-o", str(out), "--split", "test"]) == 0
    assert len(out.read_text().splitlines()) == 5


def test_exit_codes(pair, tmp_path):
    d, _, _ = pair
    assert main([]) == 2
    assert main(["nonsense"]) == 2
    assert main(["filter", f"{d}/a.evt1", "-o", f"{d}/x.evt1", "--method", "bogus"]) == 2
    assert main(["encode", f"{d}/missing.evt1", "-o", f"{d}/x.vox1"]) == 3
    (tmp_path / "bad.evt1").write_bytes(b"EVT1garbage")
    assert main(["encode", f"{d}/bad.evt1", "-o", f"{d}/x.vox1"]) == 3
    assert main(["make-dataset", "-o", f"{d}/ds"]) == 2
    (tmp_path / "c.json").write_text("[1]")
    assert main(["eval", f"{d}/a.evt1", f"{d}/b.evt1", "--config", f"{d}/c.json"]) == 2
    assert main(["estimate-profile", f"{d}/a.evt1", "-o", f"{d}/p.ifr1", "--dt", "3000"]) == 2
    assert main(["mask", f"{d}/a.evt1", "-o", f"{d}/m.evt1", "--rect", "0,0,99,99"]) == 2
