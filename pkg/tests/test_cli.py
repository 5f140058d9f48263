import json

from faceaction import cli, evaluation, imaging


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


class TestExitCodes:
    def test_no_command(self, capsys):
        assert run(capsys)[0] == cli.EXIT_USAGE

    def test_bad_option(self, capsys):
        code, _, err = run(capsys, "predict", "b.json", "m.jsonl", "--out", "s.csv", "--bogus")
        assert code == cli.EXIT_USAGE and "bogus" in err

    def test_missing_bundle(self, capsys, small_data, tmp_path):
        code, _, err = run(capsys, "predict", tmp_path / "none.json", small_data["test_manifest"],
                           "--out", tmp_path / "s.csv")
        assert code == cli.EXIT_DATA and "error" in err

    def test_bad_manifest(self, capsys, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text("{broken")
        assert run(capsys, "train", p, "--out", tmp_path / "b.json")[0] == cli.EXIT_DATA

    def test_internal_error(self, capsys, monkeypatch, tmp_path):
        def boom(*args, **kwargs):
            raise RuntimeError("unexpected")
        monkeypatch.setattr(cli.synth, "synth_generate", boom)
        assert run(capsys, "synth", tmp_path)[0] == cli.EXIT_INTERNAL


class TestEval:
    def test_hand_crafted_scores(self, capsys, tmp_path):
        root = tmp_path / "d"
        manifest = cli.synth.synth_generate(str(root), 2, 2, seed=0)
        ds = cli.dataset.load_dataset(manifest)
        ids = [r.id for r in ds.records if r.label == ds.classes[0]]
        others = [r.id for r in ds.records if r.label != ds.classes[0]]
        rows = [(ids[0], ds.classes[0], 3.0), (others[0], ds.classes[0], 2.0), (ids[1], ds.classes[0], 1.0)]
        scores = tmp_path / "s.csv"
        evaluation.write_scores(str(scores), rows)
        code, out, _ = run(capsys, "eval", scores, manifest, "--out", tmp_path / "r.json")
        assert code == 0
        assert f"AP {ds.classes[0]}: 0.8333" in out
        doc = json.loads((tmp_path / "r.json").read_text())
        assert doc["average_precision"][ds.classes[0]] == 5 / 6


class TestSmokePath:
    def test_synth_train_predict_eval(self, capsys, tmp_path):
        assert run(capsys, "synth", tmp_path / "tr", "--classes", 2, "--per-class", 4, "--seed", 1)[0] == 0
        assert run(capsys, "synth", tmp_path / "te", "--classes", 2, "--per-class", 2, "--seed", 2)[0] == 0
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"t_plus": 0.6}))
        code, out, err = run(capsys, "train", tmp_path / "tr" / "manifest.jsonl", "--out", tmp_path / "b.json",
                             "--config", cfg, "--seed", 3)
        assert code == 0, err
        doc = json.loads((tmp_path / "b.json").read_text())
        assert doc["config"]["t_plus"] == 0.6 and doc["config"]["seed"] == 3
        code, out, err = run(capsys, "predict", tmp_path / "b.json", tmp_path / "te" / "manifest.jsonl",
                             "--out", tmp_path / "s.csv", "--landmarks-out", tmp_path / "l.json",
                             "--results-out", tmp_path / "r.json")
        assert code == 0, err
        code, out, err = run(capsys, "eval", tmp_path / "s.csv", tmp_path / "te" / "manifest.jsonl",
                             "--landmarks", tmp_path / "l.json", "--out", tmp_path / "rep.json")
        assert code == 0, err
        assert "mean AP:" in out
        rep = json.loads((tmp_path / "rep.json").read_text())
        assert rep["landmark_curve"][-1] == ["inf", 1.0]

    def test_unknown_config_key(self, capsys, small_data, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"gama": 1}))
        code = run(capsys, "train", small_data["train_manifest"], "--out", tmp_path / "b.json", "--config", cfg)[0]
        assert code == cli.EXIT_DATA


class TestSingleImage:
    def target(self, small_data):
        rec = small_data["test"].records[0]
        return rec, small_data["test"].image_path(rec)

    def test_landmarks(self, capsys, small_data, tmp_path):
        rec, path = self.target(small_data)
        code, out, err = run(capsys, "landmarks", small_data["bundle_path"], path, "--box", *rec.face.box.to_list(),
                             "--overlay", tmp_path / "lm.png")
        assert code == 0, err
        doc = json.loads(out)
        assert set(doc["landmarks"]) == set(rec.face.landmarks.to_dict())
        assert imaging.load_gray(str(tmp_path / "lm.png")).shape == (160, 160)

    def test_explain(self, capsys, small_data, tmp_path):
        rec, path = self.target(small_data)
        code, out, err = run(capsys, "explain", small_data["bundle_path"], path, "--box", *rec.face.box.to_list(),
                             "--class", rec.label, "--out", tmp_path / "e.png", "--json", tmp_path / "e.json",
                             "--heatmap", tmp_path / "h.png")
        assert code == 0, err
        doc = json.loads((tmp_path / "e.json").read_text())
        assert doc["class"] == rec.label and doc["overlay"]["region_area"] > 0
        assert (tmp_path / "h.png").exists()

    def test_explain_low_score(self, capsys, small_data, tmp_path):
        rec, path = self.target(small_data)
        code, out, _ = run(capsys, "explain", small_data["bundle_path"], path, "--box", *rec.face.box.to_list(),
                           "--score", -1, "--out", tmp_path / "e.png")
        assert code == 0 and json.loads(out)["class"] is None

    def test_explain_unknown_class(self, capsys, small_data, tmp_path):
        rec, path = self.target(small_data)
        code = run(capsys, "explain", small_data["bundle_path"], path, "--box", *rec.face.box.to_list(),
                   "--class", "juggling", "--out", tmp_path / "e.png")[0]
        assert code == cli.EXIT_DATA
