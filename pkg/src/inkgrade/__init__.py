"""inkgrade: rubric-based autograding of photographed handwritten math.

One multimodal model call per submission transcribes the work and evaluates
every rubric item; humans review, override, and categorize disagreements; the
metrics module measures AI–human agreement per rubric item.
"""

__version__ = "0.1.0"

from .domain import (  # noqa: F401
    AiEvaluation,
    EffectiveGrade,
    GradeSource,
    HumanEvaluation,
    ItemSelection,
    QuestionInstance,
    Rubric,
    RubricItem,
    Submission,
    SubmissionImage,
    TokenUsage,
    compute_score,
    resolve_effective_grade,
    validate_rubric,
)
from .gateway import Gateway, ModelConfig, Provider, RawModelResponse  # noqa: F401
from .metrics import (  # noqa: F401
    AgreementReport,
    Disagreement,
    DisagreementCategory,
    ItemOutcome,
    Outcome,
    compute_report,
    item_outcomes,
    render_table,
)
from .orchestrator import GradingJob, JobStatus, Orchestrator  # noqa: F401
from .parsing import ParseOutcome, parse_evaluation, repair_pass  # noqa: F401
from .prompt import AssemblyOptions, PromptBundle, assemble_prompt  # noqa: F401
from .store import AuditEvent, AuditKind, FileStore  # noqa: F401
