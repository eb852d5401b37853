"""Modular zero-shot commonsense QA over multiple knowledge graphs.

The heavy lifting lives in the compiled extension; this package re-exports
its surface.
"""

from kgfuse._core import (  # noqa: F401
    KgSource,
    QaDataset,
    QaSample,
    KgcSample,
    TemplateRegistry,
    Triple,
    build_fusion_mixture,
    default_templates,
    derive_kgc,
    evaluate_checkpoint,
    generate_qa,
    interference_ratio,
    kgc_loss,
    load_triples,
    predict_option,
    ranking_loss,
    read_qa_jsonl,
    relative_improvement,
    render_question,
    run_algorithm1,
    split_dataset,
    write_qa_jsonl,
    __version__,
)

__all__ = [
    "KgSource",
    "QaDataset",
    "QaSample",
    "KgcSample",
    "TemplateRegistry",
    "Triple",
    "build_fusion_mixture",
    "default_templates",
    "derive_kgc",
    "evaluate_checkpoint",
    "generate_qa",
    "interference_ratio",
    "kgc_loss",
    "load_triples",
    "predict_option",
    "ranking_loss",
    "read_qa_jsonl",
    "relative_improvement",
    "render_question",
    "run_algorithm1",
    "split_dataset",
    "write_qa_jsonl",
    "__version__",
]
