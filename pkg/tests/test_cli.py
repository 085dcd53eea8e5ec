import csv
import io
import json

import pytest

from spamsim.cli import main
from spamsim.corpus import load_corpus


@pytest.fixture
def blast_file(tmp_path):
    path = tmp_path / "blast.jsonl"
    assert main(["gen-corpus", "--count", "1000", "--seed", "7", "--out", str(path)]) == 0
    return path


def rows(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


def test_gen_corpus_summary(tmp_path, capsys):
    out = tmp_path / "c.jsonl"
    assert main(["gen-corpus", "--count", "50", "--spam-ratio", "0.5", "--distinct-spam", "3",
                 "--seed", "2", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "records: 50" in text and "spam: 25" in text and "distinct spam digests: 3" in text
    assert len(load_corpus(out)) == 50


def test_gen_corpus_bad_ratio(tmp_path, capsys):
    code = main(["gen-corpus", "--count", "10", "--spam-ratio", "1.5",
                 "--out", str(tmp_path / "x.jsonl")])
    assert code == 2
    assert "spam_ratio" in capsys.readouterr().err
    assert not (tmp_path / "x.jsonl").exists()


def test_run_scenarios_append_csv(tmp_path, blast_file):
    out = tmp_path / "r.csv"
    for sid in ("1", "3"):
        assert main(["run", "--scenario", sid, "--profile", "dspam", "--corpus", str(blast_file),
                     "--out", str(out)]) == 0
    r = rows(out)
    assert out.read_text().count("scenario,profile") == 1
    assert r[0]["filter_s"] == "250.000000" and r[0]["invocations"] == "1000"
    assert r[1]["filter_s"] == "0.250000" and r[1]["invocations"] == "1"


def test_run_rejects_unknown_scenario(blast_file):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--scenario", "5", "--corpus", str(blast_file)])
    assert exc.value.code == 2


def test_run_assert_ordering(tmp_path, blast_file):
    out = tmp_path / "r.csv"
    for sid in ("1", "2", "3", "4"):
        code = main(["run", "--scenario", sid, "--corpus", str(blast_file), "--out", str(out),
                     "--assert-ordering"])
    assert code == 0
    ham = tmp_path / "ham.jsonl"
    main(["gen-corpus", "--count", "20", "--spam-ratio", "0", "--out", str(ham)])
    out2 = tmp_path / "r2.csv"
    for sid in ("1", "2", "3", "4"):
        code = main(["run", "--scenario", sid, "--profile", "hotmail", "--corpus", str(ham),
                     "--out", str(out2), "--assert-ordering"])
    assert code == 3


def test_compare_two_profiles(tmp_path, blast_file, capsys):
    out, plot = tmp_path / "cmp.csv", tmp_path / "cmp.dat"
    assert main(["compare", "--profiles", "dspam,trec", "--corpus", str(blast_file),
                 "--out", str(out), "--plot", str(plot)]) == 0
    printed = capsys.readouterr().out
    assert "speedup dspam: 1000.0" in printed and "speedup trec: 1000.0" in printed
    assert len(rows(out)) == 8
    lines = [ln for ln in plot.read_text().splitlines() if not ln.startswith("#")]
    assert [ln.split()[0] for ln in lines] == ["dspam", "trec"]


def test_compare_empty_corpus(tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["compare", "--corpus", str(empty)]) == 2
    assert "empty" in capsys.readouterr().err


def test_missing_corpus_file(tmp_path):
    assert main(["run", "--scenario", "1", "--corpus", str(tmp_path / "nope.jsonl")]) == 2


def _message_file(tmp_path, **changes):
    rec = {"id": "m1", "sender_ip": "198.51.100.1", "helo": "mail.a.example",
           "from": "staff0@a.example", "rcpt": "user1@b.example", "subject": "lunch",
           "body": "see you at noon", "label": "ham", "retry": "retry_once",
           "submitted_at": 0}
    rec.update(changes)
    path = tmp_path / "m.json"
    path.write_text(json.dumps(rec) + "\n")
    return path


def test_check_pass(tmp_path, capsys):
    assert main(["check", str(_message_file(tmp_path))]) == 0
    text = capsys.readouterr().out
    assert "SenderAuth" in text and "verdict: Pass" in text


def test_check_blacklisted(tmp_path, capsys):
    lists = tmp_path / "lists"
    lists.mkdir()
    (lists / "blacklist.txt").write_text("198.51.100.1\n")
    assert main(["check", "--lists", str(lists), str(_message_file(tmp_path))]) == 1
    assert "Blacklist" in capsys.readouterr().out


def test_check_unknown_domain(tmp_path, capsys):
    msg = _message_file(tmp_path, rcpt="someone@nowhere.example")
    assert main(["check", str(msg)]) == 1
    assert "ReceiverIdent" in capsys.readouterr().out


def test_check_malformed_message(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"id": "x"}\n')
    assert main(["check", str(path)]) == 2


def test_config_file_and_env(tmp_path, blast_file, monkeypatch):
    cfg = tmp_path / "sim.conf"
    cfg.write_text(f"# experiment\nprofile = trec\ncorpus = {blast_file}\n")
    out = tmp_path / "r.csv"
    monkeypatch.setenv("SPAMSIM_CONFIG", str(cfg))
    assert main(["run", "--scenario", "3", "--out", str(out)]) == 0
    assert rows(out)[0]["profile"] == "trec" and rows(out)[0]["filter_s"] == "0.200000"
    assert main(["run", "--scenario", "3", "--out", str(out),
                 "--set", "filter_cost_s=0.5"]) == 0
    assert rows(out)[1]["filter_s"] == "0.500000"


def test_config_unknown_key(tmp_path, blast_file, capsys):
    cfg = tmp_path / "bad.conf"
    cfg.write_text("colour = blue\n")
    assert main(["run", "--scenario", "1", "--config", str(cfg),
                 "--corpus", str(blast_file)]) == 2
    assert "colour" in capsys.readouterr().err
    assert main(["run", "--scenario", "1", "--corpus", str(blast_file),
                 "--set", "speed=9"]) == 2


def test_train_writes_tokens(tmp_path, capsys):
    corpus = tmp_path / "mix.jsonl"
    main(["gen-corpus", "--count", "40", "--spam-ratio", "0.5", "--out", str(corpus)])
    lists = tmp_path / "lists"
    assert main(["train", "--corpus", str(corpus), "--out", str(lists)]) == 0
    assert (lists / "tokens.tsv").read_text().startswith("__totals__\t20\t20")
    assert main(["check", "--lists", str(lists), str(_message_file(tmp_path))]) == 0
