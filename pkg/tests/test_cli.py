import json

import numpy as np
import pytest

from evgesture import events as ev
from evgesture import lnes
from evgesture.cli import main

SYNTH = {"width": 16, "height": 16, "duration": 40000, "step": 2000, "per_class": 6}
TRAIN = {"bin_ms": 20, "frames_per_bin": 2,
         "model": {"widths": [4, 8], "dtype": "float64"},
         "train": {"epochs": 80, "lr": 0.01, "batch_size": 4, "patience": 1000}}


def dump(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--config", dump(root / "synth.json", SYNTH),
                 "--out-dir", str(root / "corpus")]) == 0
    return root, str(root / "corpus" / "manifest.json")


@pytest.fixture(scope="module")
def trained(corpus):
    root, manifest = corpus
    conf = dump(root / "train.json", TRAIN)
    ckpts = []
    for name in ("a", "b"):
        out = root / f"{name}.ckpt"
        assert main(["train", "--data", manifest, "--config", conf, "--out", str(out)]) == 0
        ckpts.append(out)
    return root, manifest, ckpts


def test_convert_header(tmp_path):
    # the 400 ms stream spans two 200 ms bins of six frames each
    stream = ev.EventStream.from_arrays(8, 4, [0, 150_000, 399_999], [0, 1, 2], [0, 1, 2],
                                        [1, -1, 1])
    src = tmp_path / "s.evg"
    ev.save(stream, src)
    out = tmp_path / "v.bin"
    assert main(["convert", "--in", str(src), "--out", str(out)]) == 0
    with open(out, "rb") as f:
        header, vol = lnes.read_volume(f)
    assert header["shape"] == [2, 6, 2, 4, 8]
    assert vol.dtype == np.float32 and vol.max() <= 1


def test_convert_csv_needs_geometry(tmp_path):
    src = tmp_path / "s.csv"
    src.write_text("t_us,x,y,p\n0,1,1,1\n")
    assert main(["convert", "--in", str(src), "--out", str(tmp_path / "v")]) == 2
    assert main(["convert", "--in", str(src), "--out", str(tmp_path / "v"),
                 "--width", "4", "--height", "4"]) == 0


def test_train_same_seed_identical(trained):
    _, _, (a, b) = trained
    assert a.read_bytes() == b.read_bytes()
    assert (a.parent / "a.ckpt.log.jsonl").read_text() == (b.parent / "b.ckpt.log.jsonl").read_text()


def test_eval_perfect_on_train(trained):
    root, manifest, (ckpt, _) = trained
    rep = root / "r.json"
    assert main(["eval", "--data", manifest, "--ckpt", str(ckpt), "--report", str(rep),
                 "--split", "train", "--bin-ms", "20"]) == 0
    report = json.loads(rep.read_text())
    assert report["accuracy"] == 1.0
    conf = np.array(report["confusion"])
    assert np.array_equal(conf, np.diag(np.diag(conf))) and conf.sum() == 20


def test_ablate_report(corpus, tmp_path):
    _, manifest = corpus
    conf = {**TRAIN, "train": {**TRAIN["train"], "epochs": 1}, "seeds": [0]}
    rep = tmp_path / "abl.json"
    assert main(["ablate", "--data", manifest, "--config", dump(tmp_path / "c.json", conf),
                 "--report", str(rep)]) == 0
    table = json.loads(rep.read_text())["variants"]
    assert set(table) == {"baseline", "+btsm", "+ssm", "full"}


def test_stats_report(corpus, tmp_path):
    _, manifest = corpus
    rep, csv = tmp_path / "s.json", tmp_path / "d.csv"
    assert main(["stats", "--data", manifest, "--group-by", "class", "--report", str(rep),
                 "--csv", str(csv)]) == 0
    report = json.loads(rep.read_text())
    assert report["normalized_rates"]["group_by"] == "class"
    assert csv.read_text().startswith("class,total_s,")


@pytest.mark.parametrize("argv", [
    [], ["convert"], ["nonsense"], ["stats", "--data", "x", "--report", "y", "--bogus"],
    ["--threads", "0", "stats", "--data", "x", "--report", "y"],
])
def test_usage_errors(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 1
    assert "usage" in capsys.readouterr().err


def test_data_errors(tmp_path):
    bad = tmp_path / "bad.evg"
    bad.write_bytes(b"XXXX\0\0\0\0")
    assert main(["convert", "--in", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["stats", "--data", str(tmp_path / "missing.json"),
                 "--report", str(tmp_path / "r")]) == 2


def test_numeric_failure(corpus, tmp_path):
    _, manifest = corpus
    conf = {**TRAIN, "train": {"epochs": 2, "lr": 1e300, "batch_size": 4}}
    assert main(["train", "--data", manifest, "--config", dump(tmp_path / "c.json", conf),
                 "--out", str(tmp_path / "m.ckpt")]) == 3
