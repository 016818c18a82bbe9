"""judgekit: listwise LLM judging with consistency scoring and DPO dataset construction."""

__version__ = "0.1.0"
