"""Diversity-collapse measurement toolkit for sampled LM outputs."""

__version__ = "0.1.0"

from .corpus import (  # noqa: F401
    PromptGroup,
    RunManifest,
    SampleRecord,
    Sampling,
    group_by_prompt,
    ingest_generations,
    strip_reasoning,
)
from .divmetrics import (  # noqa: F401
    cosine_diversity,
    ead,
    ead_n,
    nli_diversity,
    nli_pair_score,
    sentence_split,
    vendi,
)
from .codemetrics import ast_jaccard, code_group_diversity, subtree_multiset  # noqa: F401
from .quality import (  # noqa: F401
    CorrectnessLabel,
    JudgeVerdict,
    QualitySummary,
    extract_answer,
    majority_vote,
    pass_at_k,
    wb_score,
    win_rate,
)
from .analysis import (  # noqa: F401
    QfdRecord,
    StageSeries,
    genuine_fraction,
    mv_gain,
    qfd,
    stage_loss,
)
from .decontam import NgramIndex, contamination_score, coverage, word_tokens  # noqa: F401
from .errors import (  # noqa: F401
    DivtraceError,
    IngestError,
    InputError,
    MetricUndefinedError,
    ParseError,
    ScorerError,
    ScorerProtocolError,
    ScorerUnavailableError,
)
