import random
import re
import string

import pytest

from medcoder.corpus import (
    CodeAssignment,
    CorpusError,
    LabeledNote,
    RawNoteRecord,
    SyntheticConfig,
    build_labeled_notes,
    build_top_k_subset,
    clean_text,
    generate_synthetic_corpus,
    read_code_table,
    read_noteevents,
    read_notes_labeled,
    split_dataset,
    write_notes_labeled,
    zipf_top_share,
)

TOKEN_STREAM_RE = re.compile(r"^[a-z0-9]+( [a-z0-9]+)*$")


class TestCleanText:
    def test_drops_numeric_keeps_alnum(self):
        assert clean_text("Pt given 500 mg (500mg tabs).") == "pt given mg 500mg tabs"

    def test_empty(self):
        assert clean_text("") == ""

    def test_whitespace_and_case(self):
        assert clean_text("HEART   Failure,") == "heart failure"

    def test_idempotent_on_random_strings(self):
        rng = random.Random(13)
        alphabet = string.printable
        for _ in range(1000):
            raw = "".join(rng.choice(alphabet) for _ in range(rng.randrange(0, 80)))
            once = clean_text(raw)
            assert clean_text(once) == once
            if once:
                assert TOKEN_STREAM_RE.match(once)
                assert all(re.search("[a-z]", tok) for tok in once.split())


def _note(hadm, text="chest pain noted", subject=1, desc="Discharge summary"):
    return RawNoteRecord(subject_id=subject, hadm_id=hadm, description=desc, text=text)


class TestBuildLabeledNotes:
    def test_join_orders_diagnoses_then_procedures(self):
        notes = [_note(100001)]
        codes = [
            CodeAssignment(100001, "401.9", "diagnosis", 2),
            CodeAssignment(100001, "38.93", "procedure", 1),
            CodeAssignment(100001, "428.0", "diagnosis", 1),
        ]
        labeled, report = build_labeled_notes(notes, codes)
        assert len(labeled) == 1
        assert labeled[0].labels == ["428.0", "401.9", "38.93"]
        assert report.empty_text == 0

    def test_category_filter_is_case_sensitive(self):
        notes = [_note(1, desc="Nursing note"), _note(2, desc="discharge summary")]
        codes = [CodeAssignment(1, "428.0", "diagnosis", 1),
                 CodeAssignment(2, "428.0", "diagnosis", 1)]
        labeled, report = build_labeled_notes(notes, codes)
        assert labeled == []
        assert report.wrong_category == 2

    def test_note_without_codes_excluded(self):
        labeled, report = build_labeled_notes([_note(7)], [])
        assert labeled == []
        assert report.no_codes == 1

    def test_empty_after_cleaning_counted(self):
        notes = [_note(5, text="500 -- 120/80")]
        codes = [CodeAssignment(5, "428.0", "diagnosis", 1)]
        labeled, report = build_labeled_notes(notes, codes)
        assert labeled == []
        assert report.empty_text == 1

    def test_duplicate_codes_dedup_first_occurrence(self):
        notes = [_note(9)]
        codes = [
            CodeAssignment(9, "428.0", "diagnosis", 1),
            CodeAssignment(9, "401.9", "diagnosis", 2),
            CodeAssignment(9, "428.0", "diagnosis", 3),
        ]
        labeled, _ = build_labeled_notes(notes, codes)
        assert labeled[0].labels == ["428.0", "401.9"]

    def test_multiple_notes_share_label_set(self):
        notes = [_note(3, text="first note"), _note(3, text="second note")]
        codes = [CodeAssignment(3, "038.9", "diagnosis", 1)]
        labeled, _ = build_labeled_notes(notes, codes)
        assert len(labeled) == 2
        assert labeled[0].labels == labeled[1].labels == ["038.9"]


def _labeled(n, start_hadm=0):
    return [
        LabeledNote(subject_id=i, hadm_id=start_hadm + i, text="tok", labels=["a"])
        for i in range(n)
    ]


class TestSplitDataset:
    def test_ratio_arithmetic(self):
        split = split_dataset(_labeled(10), 0.9, seed=7)
        assert len(split.train) == 9
        assert len(split.test) == 1

    def test_deterministic(self):
        a = split_dataset(_labeled(50), 0.9, seed=3)
        b = split_dataset(_labeled(50), 0.9, seed=3)
        assert [n.hadm_id for n in a.train] == [n.hadm_id for n in b.train]
        assert [n.hadm_id for n in a.test] == [n.hadm_id for n in b.test]

    def test_full_corpus_size(self):
        # floor(0.9 * 47,724) = 42,951 train ids
        split = split_dataset(_labeled(47724), 0.9, seed=0)
        assert len(split.train) == 42951
        assert len(split.test) == 47724 - 42951

    def test_disjoint_and_complete_by_hadm(self):
        notes = _labeled(31)
        notes += [LabeledNote(99, 7, "extra note same stay", ["a"])]
        split = split_dataset(notes, 0.8, seed=11)
        train_ids = {n.hadm_id for n in split.train}
        test_ids = {n.hadm_id for n in split.test}
        assert not train_ids & test_ids
        assert train_ids | test_ids == {n.hadm_id for n in notes}

    def test_too_small(self):
        with pytest.raises(CorpusError):
            split_dataset(_labeled(1), 0.9, seed=0)


class TestTopK:
    def _corpus(self):
        notes = []
        for i, labels in enumerate([["A"], ["A", "B"], ["A", "B"], ["C"]]):
            notes.append(LabeledNote(i, i, "text", labels))
        return notes

    def test_hand_counts(self):
        subset, codes = build_top_k_subset(self._corpus(), 2)
        assert codes == ["A", "B"]
        assert all(set(n.labels) <= {"A", "B"} for n in subset)
        # the note labeled only C drops out
        assert len(subset) == 3

    def test_identity_when_k_covers_all(self):
        notes = self._corpus()
        subset, codes = build_top_k_subset(notes, 3)
        assert set(codes) == {"A", "B", "C"}
        assert [n.labels for n in subset] == [n.labels for n in notes]

    def test_tie_break_lexicographic(self):
        notes = [LabeledNote(0, 0, "t", ["B"]), LabeledNote(1, 1, "t", ["A"])]
        _, codes = build_top_k_subset(notes, 1)
        assert codes == ["A"]

    def test_k_too_large(self):
        with pytest.raises(CorpusError):
            build_top_k_subset(self._corpus(), 4)

    def test_frequency_ordering_non_increasing(self):
        rng = random.Random(5)
        notes = []
        pool = [f"c{i}" for i in range(12)]
        for i in range(60):
            labels = rng.sample(pool, rng.randrange(1, 5))
            notes.append(LabeledNote(i, i, "t", labels))
        subset, codes = build_top_k_subset(notes, 6)
        from collections import Counter

        counts = Counter()
        for n in notes:
            counts.update(n.labels)
        freqs = [counts[c] for c in codes]
        assert freqs == sorted(freqs, reverse=True)
        for n in subset:
            assert n.labels
            assert set(n.labels) <= set(codes)


class TestSynthetic:
    def test_deterministic_files(self, tmp_path):
        config = SyntheticConfig(n_docs=64, n_labels=20, seed=1,
                                 mean_labels_per_doc=3, mean_tokens_per_doc=40)
        paths_a = generate_synthetic_corpus(config, tmp_path / "a")
        paths_b = generate_synthetic_corpus(config, tmp_path / "b")
        for key in paths_a:
            assert paths_a[key].read_bytes() == paths_b[key].read_bytes()

    def test_round_trip_keeps_every_document_and_label(self, tmp_path):
        config = SyntheticConfig(n_docs=20, n_labels=12, seed=4,
                                 mean_labels_per_doc=4, mean_tokens_per_doc=30)
        paths = generate_synthetic_corpus(config, tmp_path)
        notes = read_noteevents(paths["NOTEEVENTS"])
        codes = read_code_table(paths["DIAGNOSES_ICD"], "diagnosis")
        codes += read_code_table(paths["PROCEDURES_ICD"], "procedure")
        labeled, report = build_labeled_notes(notes, codes)
        assert len(labeled) == 20
        assert report.empty_text == report.no_codes == report.wrong_category == 0
        # label multiset matches the generator's assignment tables
        from collections import Counter

        truth = Counter((c.hadm_id, c.code) for c in codes)
        rebuilt = Counter(
            (n.hadm_id, code) for n in labeled for code in n.labels
        )
        assert rebuilt == truth

    def test_long_tail_calibration(self):
        # exponent solved so the 105 most frequent of 8,922 labels carry
        # about half the assignment mass
        lo, hi = 0.1, 3.0
        for _ in range(60):
            mid = (lo + hi) / 2
            if zipf_top_share(8922, mid, 105) < 0.5:
                lo = mid
            else:
                hi = mid
        s = (lo + hi) / 2
        assert abs(zipf_top_share(8922, s, 105) - 0.5) < 1e-6
        assert 0.5 < s < 1.5


def test_reference_stats_documented():
    from medcoder.corpus import REFERENCE_CORPUS_STATS as stats

    # historical anchors: defaults and docs quote these
    assert stats["full"]["train_docs"] == 47724
    assert stats["full"]["mean_labels_per_doc"] == 15.9
    assert stats["full"]["mean_tokens_per_doc"] == 1485
    assert stats["top50"]["mean_labels_per_doc"] == 5.7
    from medcoder.corpus import SyntheticConfig

    defaults = SyntheticConfig(n_docs=1, n_labels=1)
    assert defaults.mean_labels_per_doc == stats["full"]["mean_labels_per_doc"]
    assert defaults.mean_tokens_per_doc == stats["full"]["mean_tokens_per_doc"]


class TestNotesLabeledCsv:
    def test_round_trip(self, tmp_path):
        notes = [
            LabeledNote(1, 10, "pt stable on discharge", ["428.0", "38.93"]),
            LabeledNote(2, 11, "heart failure noted", ["401.9"]),
        ]
        path = tmp_path / "notes_labeled.csv"
        write_notes_labeled(notes, path)
        header = path.read_text().splitlines()[0]
        assert header == "SUBJECT_ID,HADM_ID,TEXT,LABELS"
        back = read_notes_labeled(path)
        assert back == notes

    def test_extra_columns_ignored(self, tmp_path):
        path = tmp_path / "NOTEEVENTS.csv"
        path.write_text(
            "ROW_ID,SUBJECT_ID,HADM_ID,CHARTDATE,DESCRIPTION,TEXT\n"
            '1,5,50,2101-01-01,Discharge summary,"Admitted, stable."\n'
        )
        records = read_noteevents(path)
        assert len(records) == 1
        assert records[0].hadm_id == 50
        assert records[0].text == "Admitted, stable."
