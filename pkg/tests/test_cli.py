import csv
import io
import time

import numpy as np
import pytest

from rkmips.cli import build_parser, main, score_dist
from rkmips.preprocess import IndexConfig, build_index, load_index
from rkmips.query import top_n_query
from rkmips.synthetic import gen_synthetic
from rkmips.vector_store import ConfigurationError, read_binary


@pytest.fixture(scope="module")
def data_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    users, items = root / "u.bin", root / "i.bin"
    assert main(["gen", "--n", "800", "--m", "300", "--d", "16", "--rank", "6", "--seed", "4",
                 "--users-out", str(users), "--items-out", str(items)]) == 0
    index = root / "idx.rkmi"
    assert main(["preprocess", "--users", str(users), "--items", str(items), "--out", str(index),
                 "--kmax", "10"]) == 0
    return users, items, index


def _csv(text):
    return [row for row in csv.reader(io.StringIO(text)) if row and not row[0].startswith("#")]


def test_gen_is_byte_identical_per_seed(tmp_path):
    paths = []
    for run in range(2):
        u, i = tmp_path / f"u{run}.txt", tmp_path / f"i{run}.txt"
        main(["gen", "--n", "50", "--m", "30", "--d", "8", "--rank", "3", "--seed", "11",
              "--format", "text", "--users-out", str(u), "--items-out", str(i)])
        paths.append((u.read_bytes(), i.read_bytes()))
    assert paths[0] == paths[1]
    other_u, other_i = gen_synthetic(50, 30, 8, 3, seed=12)
    assert not np.array_equal(other_u.data, gen_synthetic(50, 30, 8, 3, seed=11)[0].data)


def test_gen_item_norm_spread():
    _, items = gen_synthetic(1000, 500, 64, 16, seed=0)
    assert items.norms.max() / items.norms.min() > 2


def test_gen_speed():
    gen_synthetic(10, 10, 4, 2, seed=0)
    t0 = time.perf_counter()
    gen_synthetic(1000, 500, 64, 16, seed=0)
    assert time.perf_counter() - t0 < 1.0


@pytest.mark.parametrize("args", [(10, 10, 4, 5), (0, 10, 4, 2), (10, 10, 0, 1)])
def test_gen_rejects_bad_sizes(args):
    with pytest.raises(ConfigurationError):
        gen_synthetic(*args, seed=0)


def test_query_matches_bench_brute(data_files, capsys):
    users, items, index = data_files
    assert main(["query", "--index", str(index), "--k", "5", "--n", "8", "--stats"]) == 0
    out = capsys.readouterr().out
    assert "# items_scored:" in out
    ours = _csv(out)
    assert main(["bench", "--users", str(users), "--items", str(items), "--k", "5", "--n", "8",
                 "--method", "brute"]) == 0
    brute = _csv(capsys.readouterr().out)
    assert ours == brute
    assert ours[0] == ["rank", "item_id", "score"] and len(ours) == 9


def test_bench_ours(data_files, capsys):
    users, items, _ = data_files
    assert main(["bench", "--users", str(users), "--items", str(items), "--k", "3", "--n", "4",
                 "--kmax", "5"]) == 0
    out = capsys.readouterr().out
    assert "# preprocess_seconds:" in out and "# method: ours" in out


def test_score_dist_rows(data_files, tmp_path):
    _, _, index = data_files
    out = tmp_path / "dist.csv"
    assert main(["score-dist", "--index", str(index), "--k", "10", "--limit", "200",
                 "--out", str(out)]) == 0
    rows = _csv(out.read_text())
    assert rows[0] == ["rank", "score"]
    scores = [int(s) for _, s in rows[1:]]
    assert len(scores) == 200
    assert scores == sorted(scores, reverse=True)
    # head-heavy on generated data
    assert scores[0] > np.mean(scores)


def test_score_dist_limit_one_equals_top1(data_files):
    _, _, index = data_files
    idx = load_index(index)
    assert score_dist(idx, 10, 1) == [(1, top_n_query(load_index(index), 10, 1).scores[0])]
    with pytest.raises(ConfigurationError):
        score_dist(idx, 10, idx.m + 1)


def test_default_data_is_head_heavy():
    users, items = gen_synthetic(2000, 500, 64, 16, seed=0)
    index = build_index(users, items, 10, IndexConfig(k_max=10))
    scores = [s for _, s in score_dist(index, 10, 200)]
    assert scores[0] > np.mean(scores)


def test_errors_exit_nonzero(data_files, tmp_path, capsys):
    _, _, index = data_files
    assert main(["query", "--index", str(index), "--k", "30"]) == 2
    err = capsys.readouterr().err
    assert err.startswith("rkmips: error:") and err.count("\n") == 1
    assert main(["query", "--index", str(tmp_path / "missing")]) == 2
    bad = tmp_path / "bad.rkmi"
    bad.write_bytes(b"RKMI1garbage")
    assert main(["query", "--index", str(bad)]) == 2
    with pytest.raises(SystemExit):
        main(["query"])


def test_preprocess_rejects_bad_split(data_files, tmp_path):
    users, items, _ = data_files
    assert main(["preprocess", "--users", str(users), "--items", str(items),
                 "--out", str(tmp_path / "x"), "--dprime", "17"]) == 2


def test_help_documents_flags():
    sub = build_parser()._subparsers._group_actions[0].choices
    assert set(sub) == {"gen", "preprocess", "query", "bench", "score-dist"}
    for parser in sub.values():
        for action in parser._actions:
            assert action.help


def test_threads_env(monkeypatch, data_files, capsys):
    _, _, index = data_files
    monkeypatch.setenv("RKM_THREADS", "1")
    assert main(["query", "--index", str(index), "--k", "2", "--n", "3"]) == 0
    assert len(_csv(capsys.readouterr().out)) == 4


def test_gen_binary_format(data_files):
    users, items, _ = data_files
    assert read_binary(users).count == 800 and read_binary(items).dim == 16
