# Number of times each (case, criterion, strategy, model) prompt is sent.
DEFAULT_RUNS = 5
DEFAULT_CONCURRENCY = 4
DEFAULT_TIMEOUT = 120.0
DEFAULT_MAX_ATTEMPTS = 4
# Ratings and LLM scores share the same 1 (best) to 5 (worst) scale.
MIN_SCORE = 1
MAX_SCORE = 5
N_CATEGORIES = MAX_SCORE - MIN_SCORE + 1
ENV_PREFIX = 'GSNREV'
DEFAULT_CASE_KIND = 'assurance case'
