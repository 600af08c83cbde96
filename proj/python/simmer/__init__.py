"""Cross-modal recipe retrieval toolkit (C++ core)."""

from ._simmer import (  # noqa: F401
    DataError,
    EmbeddingDump,
    EmbeddingVector,
    NumericError,
    PromptedSample,
    Recipe,
    RecipeVariant,
    SimmerError,
    UsageError,
    __version__,
    augment,
    cosine,
    evaluate,
    info_nce,
    info_nce_grad,
    load_dump,
    make_variant,
    parse_prompt_record,
    render_image_prompt,
    render_recipe_prompt,
    run,
    save_dump,
    top_k,
    write_synthetic_corpus,
)
