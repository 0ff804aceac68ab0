from __future__ import annotations

import dataclasses

import pytest
from hypothesis import given, strategies as st

from inkgrade.errors import ConfigurationError, IntegrityError, SequencingError
from inkgrade.prompt import (
    AssemblyOptions,
    ImagePart,
    TEMPLATE_VERSION,
    assemble_prompt,
    render_rubric_block,
)

from .conftest import make_instance, make_rubric, make_submission


def _assembled(**kw):
    instance = kw.pop("instance", make_instance())
    rubric = kw.pop("rubric", make_rubric(3))
    submission = kw.pop("submission", make_submission())
    return assemble_prompt(instance, rubric, submission, kw.pop("options", None))


def test_assembly_is_deterministic():
    a = _assembled()
    b = _assembled()
    assert a == b
    assert a.fingerprint == b.fingerprint


def test_only_final_image_enters_the_bundle():
    submission = make_submission(digests=("d0", "d1", "d2"))
    bundle = _assembled(submission=submission)
    images = bundle.image_parts()
    assert images == (ImagePart(blob_digest="d2", media_type="image/png"),)
    assert "d0" not in bundle.text() and "d1" not in bundle.text()


def test_different_seeds_produce_different_bundles():
    # Oracle: textual diff of the two rendered bundles must land in the
    # reference-answer section, and the fingerprints must differ.
    inst_a = make_instance(instance_id="instA", answers=(("residual", "[0.2, -0.1]"),))
    inst_b = make_instance(instance_id="instB", answers=(("residual", "[0.7, 0.4]"),))
    sub_a = make_submission(instance_id="instA")
    sub_b = make_submission(instance_id="instB")
    bundle_a = _assembled(instance=inst_a, submission=sub_a)
    bundle_b = _assembled(instance=inst_b, submission=sub_b)
    diff = [
        (la, lb)
        for la, lb in zip(bundle_a.text().splitlines(), bundle_b.text().splitlines())
        if la != lb
    ]
    assert diff == [("- residual: [0.2, -0.1]", "- residual: [0.7, 0.4]")]
    assert bundle_a.fingerprint != bundle_b.fingerprint


def test_unfinalized_rubric_rejected():
    with pytest.raises(ConfigurationError):
        _assembled(rubric=make_rubric(3, finalized=False))


def test_unclosed_submission_rejected():
    with pytest.raises(SequencingError):
        _assembled(submission=make_submission(closed=False))


def test_question_mismatch_rejected():
    with pytest.raises(IntegrityError):
        _assembled(rubric=make_rubric(3, question_id="q2"))


def test_submission_instance_mismatch_rejected():
    with pytest.raises(IntegrityError):
        _assembled(submission=make_submission(instance_id="inst9"))


def test_reference_answers_can_be_omitted():
    bundle = _assembled(options=AssemblyOptions(include_reference_answers=False))
    assert "Reference answers" not in bundle.text()


def test_template_version_recorded():
    assert _assembled().template_version == TEMPLATE_VERSION


def test_every_item_id_appears_exactly_once():
    rubric = make_rubric(6)
    bundle = _assembled(rubric=rubric)
    text = bundle.text()
    for item in rubric.items:
        assert text.count(f"[{item.item_id}]") == 1


# ---------------------------------------------------------------------------
# render_rubric_block
# ---------------------------------------------------------------------------

def test_rubric_block_has_one_line_per_item():
    block = render_rubric_block(make_rubric(5))
    assert len(block.splitlines()) == 5


def test_rubric_block_follows_order_field_not_insertion():
    # Oracle: sort items by `order` and compare against the rendered sequence.
    from fractions import Fraction

    from inkgrade.domain import Rubric, RubricItem

    items = (
        RubricItem("late", "the late step", Fraction(1), order=2),
        RubricItem("early", "the early step", Fraction(1), order=0),
        RubricItem("mid", "the middle step", Fraction(1), order=1),
    )
    rubric = Rubric("r1", "q1", items, Fraction(3), finalized=True)
    expected = [f"- [{it.item_id}] {it.description}" for it in sorted(items, key=lambda i: i.order)]
    assert render_rubric_block(rubric).splitlines() == expected


# ---------------------------------------------------------------------------
# fingerprint sensitivity
# ---------------------------------------------------------------------------

_MUTATIONS = st.sampled_from(
    ["statement", "answer_value", "item_description", "instructions", "image", "media_type"]
)


@given(_MUTATIONS)
def test_single_field_perturbation_changes_fingerprint(mutation):
    instance = make_instance(grading_instructions="grade strictly")
    rubric = make_rubric(3)
    submission = make_submission()
    base = assemble_prompt(instance, rubric, submission)

    if mutation == "statement":
        instance = dataclasses.replace(instance, statement=instance.statement + " (redo)")
    elif mutation == "answer_value":
        instance = dataclasses.replace(instance, reference_answers=(("residual", "[9, 9]"),))
    elif mutation == "item_description":
        items = list(rubric.items)
        items[0] = dataclasses.replace(items[0], description="a different check")
        rubric = dataclasses.replace(rubric, items=tuple(items))
    elif mutation == "instructions":
        instance = dataclasses.replace(instance, grading_instructions="grade leniently")
    elif mutation == "image":
        images = (dataclasses.replace(submission.images[-1], blob_digest="other"),)
        submission = dataclasses.replace(submission, images=images)
    elif mutation == "media_type":
        images = (dataclasses.replace(submission.images[-1], media_type="image/jpeg"),)
        submission = dataclasses.replace(submission, images=images)

    mutated = assemble_prompt(instance, rubric, submission)
    assert mutated.fingerprint != base.fingerprint
