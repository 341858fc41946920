import os


def force_single_threaded() -> bool:
    return os.getenv("GG_SINGLE_THREADED", "0").lower() in {"1", "true", "yes"}


def default_workers() -> int:
    if force_single_threaded():
        return 1
    configured = os.getenv("GG_WORKERS", "")
    if configured.isdigit() and int(configured) > 0:
        return int(configured)
    return max(1, os.cpu_count() or 1)


def resolve_workers(requested: int | None) -> int:
    if force_single_threaded():
        return 1
    if requested is None:
        return default_workers()
    return max(1, requested)
