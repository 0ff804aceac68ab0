#!/usr/bin/env python3
"""Regenerate the bundled demo corpus under fixtures/demo/.

Produces:
  fixtures/demo/images/*.png      synthetic "handwritten work" photos
  fixtures/demo/manifest.json     ingest manifest (instances, rubrics,
                                  model config, submissions, human grades)
  fixtures/demo/replay/*.json     replay fixtures keyed by prompt fingerprint

The committed corpus is canonical; rerun this only when the manifest content
or the prompt template changes (fingerprints shift with either). Requires
Pillow for image generation.
"""
from __future__ import annotations

import json
import shutil
import sys
import tempfile
from pathlib import Path

from PIL import Image, ImageDraw

ROOT = Path(__file__).resolve().parent.parent
DEMO = ROOT / "fixtures" / "demo"

sys.path.insert(0, str(ROOT / "src"))

from inkgrade import store as storage  # noqa: E402
from inkgrade.cli import run_command  # noqa: E402
from inkgrade.domain import (  # noqa: E402
    TokenUsage,
    instance_from_doc,
    rubric_from_doc,
    submission_from_doc,
)
from inkgrade.gateway import write_fixture  # noqa: E402
from inkgrade.prompt import assemble_prompt  # noqa: E402
from inkgrade.store import FileStore  # noqa: E402


def draw_image(path: Path, lines: list[str], *, seed: int) -> None:
    img = Image.new("L", (480, 280), color=235)
    draw = ImageDraw.Draw(img)
    # Slightly jittered baselines so each file is visually distinct.
    y = 30
    for k, line in enumerate(lines):
        draw.text((24 + (seed * 7 + k * 3) % 18, y), line, fill=40)
        y += 44
    draw.rectangle([6, 6, 473, 273], outline=120)
    img.save(path, format="PNG")


CLOSE_AT = "2026-02-02T18:00:00+00:00"
CAPTURED = "2026-02-02T17:21:00+00:00"
GRADED = "2026-02-03T10:00:00+00:00"

Q1_ITEMS = [
    ("i1", "the residual vector r = b - A x1 is set up correctly", 1, 0),
    ("i2", "the error vector e = x - x1 is set up correctly", 1, 1),
    ("i3", "both vectors are evaluated with the instance's numbers", 1, 2),
]
Q2_ITEMS = [
    ("i1", "the projection formula proj_b(a) = (a.b / b.b) b is stated", 1, 0),
    ("i2", "the dot products a.b and b.b are computed correctly", 1, 1),
    ("i3", "the scalar multiple of b is carried through", 1, 2),
    ("i4", "the final projected vector matches the reference", 1, 3),
]


def selections(item_ids, flags, note):
    return [
        {"item_id": iid, "selected": bool(flag), "justification": note}
        for iid, flag in zip(item_ids, flags)
    ]


def build_manifest() -> dict:
    return {
        "question_instances": [
            {
                "instance_id": "inst-res-01",
                "question_id": "errors-vs-residuals",
                "variant_seed": "7421",
                "statement": (
                    "For the system Ax = b with A = [[4, 1], [2, 3]] and "
                    "b = [9, 13], the iterate is x1 = [1.8, 3.0]. Compute the "
                    "residual r and the error e (the exact solution is x = [2, 3])."
                ),
                "reference_answers": [
                    ["residual", "[-1.2, 0.4]"],
                    ["error", "[0.2, 0.0]"],
                ],
                "grading_instructions": "Accept either sign convention for r and e.",
            },
            {
                "instance_id": "inst-res-02",
                "question_id": "errors-vs-residuals",
                "variant_seed": "9963",
                "statement": (
                    "For the system Ax = b with A = [[5, 2], [1, 4]] and "
                    "b = [16, 18], the iterate is x1 = [2.1, 3.9]. Compute the "
                    "residual r and the error e (the exact solution is x = [2, 4])."
                ),
                "reference_answers": [
                    ["residual", "[-2.3, -1.7]"],
                    ["error", "[-0.1, 0.1]"],
                ],
                "grading_instructions": "Accept either sign convention for r and e.",
            },
            {
                "instance_id": "inst-proj-01",
                "question_id": "vector-projection",
                "variant_seed": "3316",
                "statement": (
                    "Compute the projection of a = [3, 4] onto b = [1, 2]."
                ),
                "reference_answers": [["projection", "[11/5, 22/5]"]],
            },
            {
                "instance_id": "inst-proj-02",
                "question_id": "vector-projection",
                "variant_seed": "5512",
                "statement": (
                    "Compute the projection of a = [6, -2] onto b = [2, 1]."
                ),
                "reference_answers": [["projection", "[4, 2]"]],
            },
        ],
        "rubrics": [
            {
                "rubric_id": "rub-res",
                "question_id": "errors-vs-residuals",
                "version": 1,
                "finalized": True,
                "max_points": 3,
                "items": [
                    {"item_id": i, "description": d, "points": p, "order": o}
                    for i, d, p, o in Q1_ITEMS
                ],
            },
            {
                "rubric_id": "rub-proj",
                "question_id": "vector-projection",
                "version": 1,
                "finalized": True,
                "max_points": 4,
                "items": [
                    {"item_id": i, "description": d, "points": p, "order": o}
                    for i, d, p, o in Q2_ITEMS
                ],
            },
        ],
        "model_configs": [
            {
                "model_config_id": "replay-vision-1",
                "provider": "REPLAY",
                "model_name": "replay-vision",
                "max_output_tokens": 2048,
                "request_timeout": 60,
                "retry": {"max_attempts": 2, "backoff_base": 0.5},
                "cost": {"per_input_token": "1/4000000", "per_output_token": "1/1000000"},
            }
        ],
        "submissions": [
            {
                "submission_id": "sub-001",
                "instance_id": "inst-res-01",
                "submitter": "anon-2f31",
                "closed_at": CLOSE_AT,
                "images": [
                    {"path": "images/sub-001.png", "media_type": "image/png",
                     "captured_at": CAPTURED}
                ],
            },
            {
                # Three uploads; only the final one is ever graded.
                "submission_id": "sub-002",
                "instance_id": "inst-res-02",
                "submitter": "anon-8c02",
                "closed_at": CLOSE_AT,
                "images": [
                    {"path": "images/sub-002-a.png", "media_type": "image/png",
                     "captured_at": "2026-02-02T17:02:00+00:00"},
                    {"path": "images/sub-002-b.png", "media_type": "image/png",
                     "captured_at": "2026-02-02T17:09:00+00:00"},
                    {"path": "images/sub-002.png", "media_type": "image/png",
                     "captured_at": CAPTURED},
                ],
            },
            {
                "submission_id": "sub-003",
                "instance_id": "inst-proj-01",
                "submitter": "anon-11aa",
                "closed_at": CLOSE_AT,
                "images": [
                    {"path": "images/sub-003.png", "media_type": "image/png",
                     "captured_at": CAPTURED}
                ],
            },
            {
                "submission_id": "sub-004",
                "instance_id": "inst-proj-02",
                "submitter": "anon-90b4",
                "closed_at": CLOSE_AT,
                "images": [
                    {"path": "images/sub-004.png", "media_type": "image/png",
                     "captured_at": CAPTURED}
                ],
            },
        ],
        "human_evaluations": [
            {
                "submission_id": "sub-001",
                "grader_id": "instructor-a",
                "created_at": GRADED,
                "selections": selections(
                    [i for i, *_ in Q1_ITEMS], [True, True, True], "full credit"
                ),
            },
            {
                # Disagrees with the AI on i1 (AI selected it): a false positive.
                "submission_id": "sub-002",
                "grader_id": "instructor-a",
                "created_at": GRADED,
                "selections": selections(
                    [i for i, *_ in Q1_ITEMS], [False, True, True],
                    "residual uses the wrong matrix row",
                ),
            },
            {
                # Disagrees with the AI on i2 (AI withheld it): a false negative.
                "submission_id": "sub-003",
                "grader_id": "instructor-b",
                "created_at": GRADED,
                "selections": selections(
                    [i for i, *_ in Q2_ITEMS], [True, True, True, True],
                    "dot products are right despite messy layout",
                ),
            },
            {
                "submission_id": "sub-004",
                "grader_id": "instructor-b",
                "created_at": GRADED,
                "selections": selections(
                    [i for i, *_ in Q2_ITEMS], [True, True, True, True], "clean solution"
                ),
            },
        ],
    }


IMAGES = {
    "sub-001.png": (["r = b - A x1 = [-1.2, 0.4]", "e = x - x1 = [0.2, 0.0]",
                     "so ||r|| = 1.26, ||e|| = 0.2"], 1),
    "sub-002-a.png": (["(first try, blurry)"], 2),
    "sub-002-b.png": (["(second try, cropped)"], 3),
    "sub-002.png": (["r = b - A x1 = [2.3, 1.7] ??", "e = [-0.1, 0.1]"], 4),
    "sub-003.png": (["a.b = 3 + 8 = 11, b.b = 5", "proj = 11/5 [1,2] = [11/5, 22/5]"], 5),
    "sub-004.png": (["a.b = 12 - 2 = 10, b.b = 5", "proj = 2 [2,1] = [4, 2]"], 6),
}

# Model bodies, one per submission. sub-002 is fenced (exercises the repair
# pass deterministically); sub-004 reports an empty transcription (quality
# flag surfaces in the review queue).
def ai_body(item_ids, flags, transcription, notes):
    return json.dumps(
        {
            "transcription": transcription,
            "items": [
                {"item_id": iid, "selected": bool(flag), "justification": note}
                for iid, flag, note in zip(item_ids, flags, notes)
            ],
        },
        indent=1,
    )


def build_bodies() -> dict[str, str]:
    q1_ids = [i for i, *_ in Q1_ITEMS]
    q2_ids = [i for i, *_ in Q2_ITEMS]
    bodies = {
        "sub-001": ai_body(
            q1_ids, [True, True, True],
            "r = b - A x1 = [-1.2, 0.4]\ne = x - x1 = [0.2, 0.0]\nso ||r|| = 1.26, ||e|| = 0.2",
            ["residual set up as b - A x1", "error set up as x - x1",
             "numbers match the instance"],
        ),
        "sub-002": "```json\n" + ai_body(
            q1_ids, [True, True, True],
            "r = b - A x1 = [2.3, 1.7]\ne = [-0.1, 0.1]",
            ["residual formula present (sign flipped, accepted)",
             "error vector written", "instance numbers used"],
        ) + "\n```",
        "sub-003": ai_body(
            q2_ids, [True, False, True, True],
            "a.b = 3 + 8 = 11, b.b = 5\nproj = 11/5 [1,2] = [11/5, 22/5]",
            ["projection formula stated", "the b.b term is smudged and unreadable",
             "scalar multiple carried", "final vector matches"],
        ),
        "sub-004": ai_body(
            q2_ids, [True, True, True, True],
            "",
            ["formula stated", "dot products right", "scalar carried",
             "final vector matches"],
        ),
    }
    return bodies


def main() -> None:
    images_dir = DEMO / "images"
    replay_dir = DEMO / "replay"
    if replay_dir.exists():
        shutil.rmtree(replay_dir)
    images_dir.mkdir(parents=True, exist_ok=True)
    replay_dir.mkdir(parents=True, exist_ok=True)

    for name, (lines, seed) in IMAGES.items():
        draw_image(images_dir / name, lines, seed=seed)

    manifest = build_manifest()
    (DEMO / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")

    # Ingest into a scratch store to compute the real prompt fingerprints.
    with tempfile.TemporaryDirectory() as tmp:
        store_dir = Path(tmp) / "store"
        result = run_command(
            ["ingest", "--store", str(store_dir), str(DEMO / "manifest.json")]
        )
        if result.exit_code != 0:
            raise SystemExit(f"ingest failed:\n{result.stderr}")
        store = FileStore(store_dir, create=False)
        bodies = build_bodies()
        rubric_docs = [
            store.get_document(storage.KIND_RUBRIC, doc_id)
            for doc_id in store.list_documents(storage.KIND_RUBRIC)
        ]
        for submission_id, body in bodies.items():
            submission = submission_from_doc(
                store.get_document(storage.KIND_SUBMISSION, submission_id)
            )
            instance = instance_from_doc(
                store.get_document(storage.KIND_QUESTION_INSTANCE, submission.instance_id)
            )
            rubric = rubric_from_doc(
                next(d for d in rubric_docs if d["question_id"] == instance.question_id)
            )
            bundle = assemble_prompt(instance, rubric, submission)
            write_fixture(
                replay_dir,
                bundle.fingerprint,
                body,
                TokenUsage(1400, 320),
                recorded_at="2026-02-03T08:00:00+00:00",
            )
            print(f"{submission_id}: fixture {bundle.fingerprint[:16]}…")
    print(f"demo corpus written under {DEMO}")


if __name__ == "__main__":
    main()
