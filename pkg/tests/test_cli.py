import json

import pytest

from canrbm.cli import (EXIT_CONFIG, EXIT_DATA, EXIT_DIMENSION, EXIT_FORMAT, EXIT_IO, FIXTURE_FILES, build_parser,
                        config_hash, main, resolve_config)
from canrbm.codec import load_dataset
from canrbm.rbm import read_model

SMALL = {"fixtures": {"attack_frames": 27 * 40, "normal_frames": 27 * 300}, "train": {"epochs": 3},
         "generate": {"count": 540, "gibbs_iters": 10}}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "config.json"
    config.write_text(json.dumps(SMALL))
    assert main(["fixtures", "--config", str(config), "--output-dir", str(root / "fx"), "--seed", "3"]) == 0
    return root, config


def run(*argv):
    return main([str(a) for a in argv])


class TestPipeline:
    def test_fixture_files(self, workspace):
        root, _ = workspace
        names = {p.name for p in (root / "fx").iterdir()}
        assert set(FIXTURE_FILES.values()) <= names and "fixtures_manifest.json" in names
        manifest = json.loads((root / "fx" / "fixtures_manifest.json").read_text())
        assert manifest["provenance"].startswith("config=")

    def test_preprocess_train_generate_similarity(self, workspace, tmp_path):
        root, config = workspace
        assert run("preprocess", "--config", config, "--input", root / "fx" / "fuzzy.csv", "--attack-type", "fuzzy",
                   "--output-dir", tmp_path / "pre") == 0
        dataset, comments = load_dataset((tmp_path / "pre" / "fuzzy.dataset").read_bytes())
        assert len(dataset) > 0 and comments[0].startswith("config=") and comments[0].endswith("seed=0")

        assert run("train", "--config", config, "--input", tmp_path / "pre" / "fuzzy.dataset",
                   "--output-dir", tmp_path / "tr") == 0
        model_text = (tmp_path / "tr" / "fuzzy.model").read_text().splitlines()
        assert model_text[1] == "fuzzy full96 96 32 1000000"
        assert len((tmp_path / "tr" / "fuzzy.train.tsv").read_text().splitlines()) == 2 + 3

        assert run("generate", "--config", config, "--input", tmp_path / "tr" / "fuzzy.model", "--count", 10000,
                   "--output-dir", tmp_path / "gen") == 0
        rows = (tmp_path / "gen" / "fuzzy.generated.csv").read_text().splitlines()
        assert len(rows) == 10_000 and all(r.endswith(",T") for r in rows[:50])
        manifest = (tmp_path / "gen" / "fuzzy.generated.manifest").read_text()
        assert "count=10000" in manifest and "gibbs_iters=10" in manifest and "config_hash=" in manifest

        assert run("similarity", "--input", tmp_path / "gen" / "fuzzy.generated.csv",
                   "--reference", tmp_path / "pre" / "fuzzy.dataset", "--output-dir", tmp_path / "sim") == 0
        table = (tmp_path / "sim" / "fuzzy.similarity.tsv").read_text().splitlines()
        assert table[1].startswith("strategy\tmean_cosine") and len(table) == 4
        assert [line.split("\t")[0] for line in table[2:]] == ["nearest_neighbor", "random_pairs"]

    def test_dos_preset_from_raw_log(self, workspace, tmp_path):
        root, config = workspace
        assert run("train", "--config", config, "--input", root / "fx" / "dos.csv", "--attack-type", "dos",
                   "--output-dir", tmp_path) == 0
        model, meta = read_model(tmp_path / "dos.model")
        assert (model.kv, model.kh) == (16, 8) and meta.attack_type.value == "dos"

    def test_ids_eval(self, workspace, tmp_path):
        root, config = workspace
        assert run("ids-eval", "--config", config, "--input", root / "fx", "--output-dir", tmp_path,
                   "--export-images") == 0
        comparison = (tmp_path / "comparison.tsv").read_text().splitlines()
        assert comparison[1] == "metric\tbefore\tafter\tdelta"
        manifest = (tmp_path / "split_manifest.tsv").read_text().splitlines()
        assert manifest[1] == "partition\twindow_index\tlabel"
        assert {line.split("\t")[0] for line in manifest[2:]} == {"train", "validation", "test"}
        hashes = dict(line.split("\t", 1) for line in (tmp_path / "partition_hashes.tsv").read_text().splitlines()[2:])
        for name in ("validation", "test"):
            before, after = hashes[name].split("\t")
            assert before == after
        assert sorted(p.name for p in (tmp_path / "models").iterdir()) == [
            "dos.model", "fuzzy.model", "gear.model", "rpm.model"]
        assert any((tmp_path / "windows").iterdir())


class TestErrors:
    def test_preset_refuses_mismatched_dataset(self, workspace, tmp_path):
        root, config = workspace
        run("preprocess", "--input", root / "fx" / "gear.csv", "--attack-type", "gear", "--output-dir", tmp_path)
        assert run("train", "--input", tmp_path / "gear.dataset", "--attack-type", "dos",
                   "--output-dir", tmp_path / "x") == EXIT_DIMENSION

    def test_generate_refuses_mismatched_attack(self, workspace, tmp_path):
        root, config = workspace
        run("train", "--config", config, "--input", root / "fx" / "rpm.csv", "--attack-type", "rpm",
            "--output-dir", tmp_path)
        assert run("generate", "--input", tmp_path / "rpm.model", "--attack-type", "dos",
                   "--output-dir", tmp_path / "g") == EXIT_DIMENSION

    def test_missing_input(self, tmp_path):
        assert run("train", "--input", tmp_path / "nope", "--output-dir", tmp_path) == EXIT_IO

    def test_missing_attack_type(self, workspace, tmp_path):
        root, _ = workspace
        assert run("preprocess", "--input", root / "fx" / "gear.csv", "--output-dir", tmp_path) == EXIT_CONFIG

    def test_bad_config(self, tmp_path):
        bad = tmp_path / "bad.json"
        for text in ('{"train": {"momentum": 0.9}}', '{"colour": 1}', "{not json", '{"train": {"eta": -1}}',
                     '{"scale_factor": 0}'):
            bad.write_text(text)
            assert run("fixtures", "--config", bad, "--output-dir", tmp_path) == EXIT_CONFIG, text

    def test_strict_parse(self, tmp_path, capsys):
        log = tmp_path / "log.csv"
        log.write_text("1.0,0260,8,00,00,00,00,00,00,00,00,T\n1.1,zz,8\n")
        assert run("preprocess", "--input", log, "--attack-type", "gear", "--strict-parse",
                   "--output-dir", tmp_path) == EXIT_FORMAT
        assert "format error" in capsys.readouterr().err
        assert run("preprocess", "--input", log, "--attack-type", "gear", "--output-dir", tmp_path) == 0

    def test_wrong_file_kind(self, workspace, tmp_path):
        root, _ = workspace
        assert run("generate", "--input", root / "fx" / "gear.csv", "--output-dir", tmp_path) == EXIT_FORMAT

    def test_empty_dataset(self, tmp_path):
        log = tmp_path / "log.csv"
        log.write_text("1.0,0260,8,00,00,00,00,00,00,00,00,R\n")
        assert run("train", "--input", log, "--attack-type", "gear", "--output-dir", tmp_path) == EXIT_DATA


class TestConfig:
    def test_flags_override_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"seed": 1, "train": {"epochs": 7, "eta": 0.2}, "attack_type": "gear"}))
        args = build_parser().parse_args(["train", "--config", str(path), "--epochs", "2", "--attack-type", "rpm"])
        config = resolve_config(args)
        assert (config.seed, config.train.epochs, config.train.eta, config.attack_type) == (1, 2, 0.2, "rpm")
        assert config.hidden_units == 32

    def test_hash_tracks_settings_and_input_content(self, tmp_path):
        log = tmp_path / "a.csv"
        log.write_text("1.0,0260,8,00,00,00,00,00,00,00,00,T\n")
        parse = build_parser().parse_args
        base = resolve_config(parse(["train", "--input", str(log), "--output-dir", "x"]))
        moved = resolve_config(parse(["train", "--input", str(log), "--output-dir", "y"]))
        assert config_hash("train", base) == config_hash("train", moved)
        assert config_hash("train", base) != config_hash("generate", base)
        reseeded = resolve_config(parse(["train", "--input", str(log), "--seed", "5"]))
        assert config_hash("train", base) != config_hash("train", reseeded)
        h = config_hash("train", base)
        log.write_text("2.0,0260,8,00,00,00,00,00,00,00,00,T\n")
        assert config_hash("train", base) != h
