import threading

from chaoscatch.constants import JournalKind
from chaoscatch.telemetry.journal import Journal, read_journal


def test_records_are_ordered_by_timestamp(tmp_path):
    times = iter([10.0, 9.0, 12.0])
    journal = Journal(tmp_path / "journal.ndjson", wall_clock=lambda: next(times))

    for _ in range(3):
        journal.append(JournalKind.LOG, payload={"message": "x"})
    journal.close()

    records = read_journal(journal.path)

    assert [r.seq for r in records] == [0, 1, 2]
    assert [r.ts for r in records] == [10.0, 10.0, 12.0]


def test_reopening_continues_sequence(tmp_path):
    path = tmp_path / "journal.ndjson"

    first = Journal(path)
    first.append(JournalKind.EXIT, payload={"status": "normal"}, ts=50.0)
    first.close()

    second = Journal(path, wall_clock=lambda: 1.0)
    record = second.append(JournalKind.LOG)
    second.close()

    assert record.seq == 1
    assert record.ts == 50.0
    assert len(read_journal(path)) == 2


def test_concurrent_appends_are_all_written(tmp_path):
    journal = Journal(tmp_path / "journal.ndjson")

    def worker(n):
        for i in range(200):
            journal.append(JournalKind.INJECTION, point_id=f"p{n}", payload={"i": i})

    threads = [threading.Thread(target=worker, args=(n,)) for n in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    assert journal.flush()
    journal.close()

    records = read_journal(journal.path)
    assert len(records) == 800
    assert sorted(r.seq for r in records) == list(range(800))
    assert all(a.ts <= b.ts for a, b in zip(records, records[1:], strict=False))


def test_torn_last_line_is_ignored(tmp_path):
    path = tmp_path / "journal.ndjson"
    journal = Journal(path)
    journal.append(JournalKind.LOG, payload={"message": "ok"})
    journal.close()

    with path.open("a") as f:
        f.write('{"seq": 1, "ts"')

    assert len(read_journal(path)) == 1


def test_missing_journal_reads_empty(tmp_path):
    assert read_journal(tmp_path / "nothing.ndjson") == []
