import hashlib
import json

import numpy as np
import pytest

from cpdss import pipeline
from cpdss.cli import main
from cpdss.config import Config
from cpdss.geometry import build_backbone
from cpdss.protio import Protein, write_pdb
from cpdss.ssgraph import SSGraph
from cpdss.toydata import write_toy_dataset

TINY = dict(d=16, emb_blocks=1, emb_heads=2, dec_blocks=1, dec_heads=2, dec_ffn=32, d_h=16, egnn_layers=2,
            time_dim=8, T=10, stage1_steps=20, stage2_steps=20, batch_size=4, stage2_batch=4, n_samples=3,
            gen_max_len=40, log_every=5, val_fraction=0.0)


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    write_toy_dataset(root / "pdb", n=6, seed=0)
    (root / "tiny.json").write_text(json.dumps(TINY))
    return root


@pytest.fixture(scope="module")
def trained(workdir):
    cfgp = str(workdir / "tiny.json")
    assert main(["prepare", str(workdir / "pdb"), "--out", str(workdir / "data"), "--config", cfgp]) == 0
    assert main(["train-decoder", str(workdir / "data"), "--out", str(workdir / "s1"), "--config", cfgp,
                 "--deterministic"]) == 0
    assert main(["train-diffusion", str(workdir / "data"), "--stage1", str(workdir / "s1/stage1.cpds"),
                 "--out", str(workdir / "s2"), "--config", cfgp]) == 0
    return workdir


def test_prepare_counts_errors_and_rejections(tmp_path):
    src = tmp_path / "in"
    write_toy_dataset(src, n=1, seed=1)
    (src / "broken.pdb").write_text("HETATM    1  O   HOH A   1       0.000   0.000   0.000  1.00  0.00           O\n")
    n = 160
    loop = Protein("loopy", "G" * n, build_backbone(np.full(n, -80.0), np.full(n, 150.0)))
    (src / "loopy.pdb").write_text(write_pdb(loop))
    (src / "loopy.ss").write_text("H" * 5 + "C" * 150 + "H" * 5 + "\n")
    man = pipeline.prepare(src, tmp_path / "out", Config(**TINY))
    assert man["counts"] == {"kept": 1, "rejected": 1, "errors": 1}
    assert man["rejected"][0]["id"] == "loopy" and "150" in man["rejected"][0]["reason"]
    assert man["kept"][0]["n"] == len(man["kept"][0]["aa_seq"])
    first = (tmp_path / "out/manifest.json").read_bytes()
    pipeline.prepare(src, tmp_path / "out", Config(**TINY))
    assert (tmp_path / "out/manifest.json").read_bytes() == first


def test_train_decoder_outputs(trained):
    rows = (trained / "s1/stage1_loss.csv").read_text().splitlines()
    assert rows[0] == "step,split,loss"
    assert [r.split(",")[0] for r in rows[1:]] == ["5", "10", "15", "20"]
    assert (trained / "s1/stage1_best.cpds").exists()


def test_train_decoder_deterministic(trained, tmp_path):
    cfgp = str(trained / "tiny.json")
    main(["train-decoder", str(trained / "data"), "--out", str(tmp_path), "--config", cfgp, "--deterministic"])
    assert (tmp_path / "stage1_loss.csv").read_bytes() == (trained / "s1/stage1_loss.csv").read_bytes()
    assert digest(tmp_path / "stage1.cpds") == digest(trained / "s1/stage1.cpds")


def test_resume_continues_the_same_curve(trained, tmp_path):
    cfg = Config(**TINY)
    half = tmp_path / "half"
    pipeline.train_decoder(trained / "data", cfg.replace(stage1_steps=10), half)
    pipeline.train_decoder(trained / "data", cfg, half, resume=half / "stage1.cpds")
    full = (trained / "s1/stage1_loss.csv").read_text().splitlines()
    resumed = (half / "stage1_loss.csv").read_text().splitlines()
    assert resumed[0] == full[0]
    for a, b in zip(resumed[1:], full[1:]):
        assert abs(float(a.split(",")[2]) - float(b.split(",")[2])) < 1e-5
    assert len(resumed) == len(full)


def test_resume_refuses_other_config(trained, tmp_path, capsys):
    with pytest.raises(pipeline.ConfigMismatch, match="lr"):
        pipeline.train_decoder(trained / "data", Config(**TINY).replace(lr=0.1), tmp_path,
                               resume=trained / "s1/stage1.cpds")
    cfgp = tmp_path / "other.json"
    cfgp.write_text(json.dumps(dict(TINY, dec_ffn=64)))
    code = main(["train-decoder", str(trained / "data"), "--out", str(tmp_path), "--config", str(cfgp),
                 "--resume", str(trained / "s1/stage1.cpds")])
    assert code == 2 and "dec_ffn" in capsys.readouterr().err


def test_stage2_leaves_stage1_untouched_and_cache_is_stable(trained, tmp_path):
    before = digest(trained / "s1/stage1.cpds")
    pipeline.train_diffusion(trained / "data", trained / "s1/stage1.cpds", Config(**TINY), tmp_path)
    assert digest(trained / "s1/stage1.cpds") == before
    assert digest(tmp_path / "latents.cpds") == digest(trained / "s2/latents.cpds")
    _, model = pipeline.load_stage1(trained / "s1/stage1.cpds")
    snapshot = {k: v.copy() for k, v in model.arrays().items()}
    _, examples = pipeline.load_prepared(trained / "data")
    pipeline.cache_latents(model, examples)
    assert all(np.array_equal(snapshot[k], v) for k, v in model.arrays().items())


def test_generate_counts_and_determinism(trained, tmp_path):
    g = sorted((trained / "data/graphs").glob("*.json"))[0]
    s1, s2 = str(trained / "s1/stage1.cpds"), str(trained / "s2/stage2.cpds")
    cfgp = str(trained / "tiny.json")
    out = tmp_path / "many.jsonl"
    assert main(["generate", str(g), "--stage1", s1, "--stage2", s2, "--n-samples", "200", "--out", str(out),
                 "--config", cfgp]) == 0
    recs = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(recs) == 200 and [r["sample_index"] for r in recs] == list(range(200))
    assert len({r["seed"] for r in recs}) == 200
    again = tmp_path / "again.jsonl"
    main(["generate", str(g), "--stage1", s1, "--stage2", s2, "--n-samples", "200", "--out", str(again),
          "--config", cfgp])
    assert again.read_bytes() == out.read_bytes()


def test_generate_degenerate_and_bad_graphs(trained, tmp_path):
    one = tmp_path / "one.json"
    one.write_text(SSGraph(["H"], np.zeros((1, 3)), np.zeros((0, 2), int), np.zeros(0), id="solo").to_json())
    bad = tmp_path / "bad.json"
    bad.write_text('{"types": ["H"]}')
    out = tmp_path / "g.jsonl"
    n = pipeline.generate([bad, one], trained / "s1/stage1.cpds", trained / "s2/stage2.cpds", Config(**TINY), out)
    recs = [json.loads(line) for line in out.read_text().splitlines()]
    assert n == 3 and {r["template_id"] for r in recs} == {"solo"}


def _write_records(path, pairs):
    with open(path, "w") as fh:
        for tid, seq, i in pairs:
            fh.write(json.dumps({"template_id": tid, "sample_index": i, "sequence": seq, "truncated": False,
                                 "seed": 0}) + "\n")


def test_evaluate_wild_type_is_perfect(trained, tmp_path):
    man = json.loads((trained / "data/manifest.json").read_text())
    pairs = [(r["id"], r["aa_seq"], i) for r in man["kept"][:2] for i in range(3)]
    _write_records(tmp_path / "wt.jsonl", pairs)
    cfg = Config(**TINY)
    rep = pipeline.evaluate(tmp_path / "wt.jsonl", trained / "data", cfg)
    agg = rep["aggregate"]
    assert agg["seq_id"]["mean"] == 100.0
    assert agg["id"]["mean"] == 100.0 and agg["id_noloop"]["mean"] == 100.0
    assert agg["mse"]["mean"] == 0.0 and agg["mse_noloop"]["mean"] == 0.0
    assert rep["mode"] == "self-consistency" and rep["config_hash"] == cfg.hash()
    assert rep["config"] == cfg.to_dict()


def test_evaluate_aggregate_is_mean_of_templates(trained, tmp_path):
    report = tmp_path / "r.json"
    gen = tmp_path / "gen.jsonl"
    graphs = sorted((trained / "data/graphs").glob("*.json"))[:2]
    pipeline.generate(graphs, trained / "s1/stage1.cpds", trained / "s2/stage2.cpds", Config(**TINY), gen)
    assert main(["evaluate", str(gen), str(trained / "data"), "--out", str(report),
                 "--config", str(trained / "tiny.json")]) == 0
    rep = json.loads(report.read_text())
    per = rep["per_template"]
    assert len(per) == 2
    for key in ("id", "id_noloop", "mse", "mse_noloop"):
        assert rep["aggregate"][key]["mean"] == pytest.approx(np.mean([v[key]["mean"] for v in per.values()]))
    assert rep["aggregate"]["id_max"]["mean"] == pytest.approx(np.mean([v["id_max"] for v in per.values()]))


def test_evaluate_sidecar_mode_drops_missing(trained, tmp_path):
    man = json.loads((trained / "data/manifest.json").read_text())
    r = man["kept"][0]
    _write_records(tmp_path / "g.jsonl", [(r["id"], r["aa_seq"], 0), (r["id"], r["aa_seq"], 1)])
    side = tmp_path / "ss"
    side.mkdir()
    (side / f"{r['id']}_0.ss").write_text(r["ss_seq"] + "\n")
    rep = pipeline.evaluate(tmp_path / "g.jsonl", trained / "data", Config(**TINY), "sidecar", side)
    assert rep["dropped_samples"] == 1 and rep["mode"] == "sidecar"
    assert rep["per_template"][r["id"]]["id"]["mean"] == 100.0


def test_propensity_predictor_recovers_toy_classes(trained):
    _, ex = pipeline.load_prepared(trained / "data")
    pred = pipeline.PropensityPredictor([(e.aa_seq, e.ss_seq) for e in ex])
    for e in ex:
        assert pred.predict(e.aa_seq) == e.ss_seq
