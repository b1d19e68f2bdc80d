#!/usr/bin/env python3
"""Smoke test for the fltop_ctc extension module.

Builds nothing itself: it locates the compiled cdylib under target/, copies
it into a temp directory under the importable name, and exercises the main
types and operations. Build the extension first:

    cargo build -p fltop-py --release   # or omit --release

Then run:

    python3 python/smoke_test.py
"""

import math
import os
import shutil
import sys
import tempfile


def locate_extension():
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    candidates = [
        os.path.join(root, "target", profile, name)
        for profile in ("release", "debug")
        for name in ("libfltop_ctc.so", "libfltop_ctc.dylib", "fltop_ctc.dll")
    ]
    for path in candidates:
        if os.path.exists(path):
            return path
    sys.exit("fltop_ctc cdylib not found; run `cargo build -p fltop-py` first")


def import_module():
    src = locate_extension()
    stage = tempfile.mkdtemp(prefix="fltop_ctc_")
    suffix = ".pyd" if src.endswith(".dll") else ".so"
    shutil.copy(src, os.path.join(stage, "fltop_ctc" + suffix))
    sys.path.insert(0, stage)
    import fltop_ctc

    return fltop_ctc


ARPA = """\\data\\
ngram 1=4
ngram 2=2

\\1-grams:
-99\t<s>\t-0.30103
-0.5\ta\t-0.1
-0.7\tb
-0.6\t</s>

\\2-grams:
-0.2\ta b
-0.4\t<s> a

\\end\\
"""


def main():
    m = import_module()

    # Deterministic synthetic emissions with a planted labeling.
    em, reference = m.EmissionMatrix.generate_synthetic(80, 16, 50.0, 7)
    em2, reference2 = m.EmissionMatrix.generate_synthetic(80, 16, 50.0, 7)
    assert reference == reference2
    assert em.num_frames == 80 and em.vocab_size == 16
    assert all(abs(sum(em.row(t)) - 1.0) < 1e-9 for t in range(em.num_frames))

    vocab = m.Vocabulary.synthetic(16)
    assert vocab.blank_id == 0 and vocab.word_sep_id == 1
    assert vocab.id_to_token(2) == "a"
    assert vocab.token_to_id("a") == 2

    # Decoding recovers the planted transcript on peaked emissions.
    result = m.decode_emissions(em, vocab, instrument="best-beam")
    assert result.transcript == vocab.render_transcript(reference), result.transcript
    assert result.log_score <= result.acoustic_score + result.lm_score + 1e-9
    assert len(result.beam_counts) == 80
    assert result.expansions > 0
    assert len(result.selection_trail) == 80
    print(f"decoded: {result.transcript!r}  (mean beams {result.mean_beams:.1f})")

    # Frame pruning: the relative threshold cuts the sorted candidate walk.
    kept = m.prune_frame([0.7, 0.2, 0.06, 0.03, 0.01], 4, 0.1)
    assert kept == [(0, 0.7), (1, 0.2)], kept
    kept = m.prune_frame([0.7, 0.2, 0.06, 0.03, 0.01], 4, 0.0)
    assert len(kept) == 4

    # Tighter pruning never changes this peaked decode but shrinks the work.
    pruned = m.decode_emissions(
        em, vocab, m.DecoderConfig(top_n=4, rel_threshold=0.007)
    )
    assert pruned.transcript == result.transcript
    assert pruned.expansions < result.expansions

    # Round-trip through the binary emission format.
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "utt.fltp")
        em.save_binary(path)
        reloaded = m.EmissionMatrix.load(path)
        assert reloaded.num_frames == em.num_frames
        again = m.decode_emissions(reloaded, vocab)
        assert again.transcript == result.transcript

    # ARPA model scoring.
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "tiny.arpa")
        with open(path, "w") as f:
            f.write(ARPA)
        lm = m.NGramModel.parse_arpa(path)
        assert lm.order == 2
        assert abs(lm.score_word(["a"], "b") - (-0.2)) < 1e-12
        # Scoring starts from <s>; "<s> b" is absent, so backoff(<s>) + p(b).
        assert abs(lm.score_word([], "b") - (-0.30103 + -0.7)) < 1e-12
        expected = -0.4 + -0.2 + (-0.6)  # <s> a, a b, then </s> via backoff(b)=0
        assert abs(lm.sentence_logprob(["a", "b"]) - expected) < 1e-12

    # Metrics.
    d, subs, ins, dels = m.edit_distance(list("kitten"), list("sitting"))
    assert (d, subs, ins, dels) == (3, 2, 1, 0)
    wer = m.corpus_wer([("a b c d", "a x c")])
    assert wer["substitutions"] == 1 and wer["deletions"] == 1
    assert math.isclose(wer["wer"], 50.0)

    print("smoke test: all checks passed")


if __name__ == "__main__":
    main()
