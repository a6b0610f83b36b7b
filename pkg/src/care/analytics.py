"""Reading and commenting metrics computed from behavioral event logs.

All metrics are pure functions of the (immutable) event list, so any
recomputation is bit-stable. Events are the export-shaped dicts
{type, ts, clientTs, userId, documentId, payload}; server timestamps
(ts) drive every metric, clientTs is diagnostic only.
"""

from __future__ import annotations

import statistics
from collections import defaultdict
from dataclasses import dataclass

Event = dict

# Event types that count as an interaction for first-interaction timing.
# The first page_view after entering is the initial render and does not
# count; later page views do.
INTERACTION_TYPES = frozenset(
    {
        "page_view",
        "comm_create",
        "comm_edit",
        "comm_delete",
        "quickscroll_to_sidebar",
        "quickscroll_to_highlight",
        "text_selection",
    }
)


@dataclass(frozen=True, slots=True)
class SessionWindow:
    """One user's stay in one document, from doc_enter to doc_leave."""

    t_e: int
    t_l: int
    user_id: str
    document_id: str
    synthetic_leave: bool = False

    def __post_init__(self) -> None:
        if self.t_l <= self.t_e:
            raise ValueError("window requires t_l > t_e")


def reltime(t_c: int, window: SessionWindow) -> float:
    """Position of time t_c inside the window, normalized to [0, 1]."""
    if not window.t_e <= t_c <= window.t_l:
        raise ValueError(f"t_c {t_c} outside window [{window.t_e}, {window.t_l}]")
    return (t_c - window.t_e) / (window.t_l - window.t_e)


def _by_pair(events: list[Event]) -> dict[tuple[str, str], list[Event]]:
    pairs: dict[tuple[str, str], list[Event]] = defaultdict(list)
    for e in events:
        pairs[(e["userId"], e["documentId"])].append(e)
    for seq in pairs.values():
        seq.sort(key=lambda e: e["ts"])
    return pairs


def session_windows(events: list[Event]) -> tuple[list[SessionWindow], list[dict]]:
    """Pair doc_enter with the following doc_leave per user-document.

    A missing doc_leave is synthesized at the pair's last event timestamp
    and flagged (off-screen activity is not observable, so the real leave
    time is unknowable). Enters with no subsequent activity, and leaves
    without an enter, are reported and skipped.
    """
    windows: list[SessionWindow] = []
    issues: list[dict] = []
    for (user_id, document_id), seq in sorted(_by_pair(events).items()):
        open_enter: int | None = None
        last_ts: int | None = None
        for e in seq:
            if e["type"] == "doc_enter":
                if open_enter is not None:
                    _close(windows, issues, user_id, document_id, open_enter, last_ts, True)
                open_enter = e["ts"]
                last_ts = e["ts"]
                continue
            if e["type"] == "doc_leave":
                if open_enter is None:
                    issues.append(
                        {"kind": "leave-without-enter", "userId": user_id, "documentId": document_id, "ts": e["ts"]}
                    )
                    continue
                _close(windows, issues, user_id, document_id, open_enter, e["ts"], False)
                open_enter = None
                last_ts = None
                continue
            if open_enter is not None:
                last_ts = e["ts"]
        if open_enter is not None:
            _close(windows, issues, user_id, document_id, open_enter, last_ts, True)
    return windows, issues


def _close(windows, issues, user_id, document_id, t_e, t_l, synthetic) -> None:
    if t_l is None or t_l <= t_e:
        issues.append(
            {"kind": "unclosable-window", "userId": user_id, "documentId": document_id, "ts": t_e}
        )
        return
    windows.append(SessionWindow(t_e, t_l, user_id, document_id, synthetic_leave=synthetic))


def reltime_histogram(events: list[Event], bins: int = 10) -> dict:
    """Pooled histogram of commentary-creation reltimes across users.

    Fixed bin edges [i/bins, (i+1)/bins); a reltime of exactly 1.0 falls
    in the last bin. Creations outside any resolvable window are excluded
    and counted.
    """
    if bins <= 0:
        raise ValueError("bins must be positive")
    windows, issues = session_windows(events)
    by_pair: dict[tuple[str, str], list[SessionWindow]] = defaultdict(list)
    for w in windows:
        by_pair[(w.user_id, w.document_id)].append(w)
    counts = [0] * bins
    excluded = 0
    for e in events:
        if e["type"] != "comm_create":
            continue
        window = next(
            (
                w
                for w in by_pair.get((e["userId"], e["documentId"]), [])
                if w.t_e <= e["ts"] <= w.t_l
            ),
            None,
        )
        if window is None:
            excluded += 1
            continue
        r = reltime(e["ts"], window)
        counts[min(int(r * bins), bins - 1)] += 1
    return {
        "bins": bins,
        "counts": counts,
        "total": sum(counts),
        "excluded": excluded,
        "issues": issues,
    }


def page_reading_times(events: list[Event], window: SessionWindow) -> dict[int, float]:
    """Share of the window spent per page, from page_view deltas.

    Each page_view is credited from its timestamp until the next one; the
    final interval closes at t_l. Values are normalized by the window
    length; they sum to 1.0 exactly when the first view coincides with
    t_e, less otherwise. No views yields an empty map.
    """
    views = sorted(
        (
            e
            for e in events
            if e["type"] == "page_view"
            and e["userId"] == window.user_id
            and e["documentId"] == window.document_id
            and window.t_e <= e["ts"] <= window.t_l
        ),
        key=lambda e: e["ts"],
    )
    if not views:
        return {}
    total = window.t_l - window.t_e
    credit: dict[int, float] = defaultdict(float)
    for i, view in enumerate(views):
        end = views[i + 1]["ts"] if i + 1 < len(views) else window.t_l
        credit[view["payload"]["page_index"]] += (end - view["ts"]) / total
    return dict(credit)


def task_timings(events: list[Event]) -> dict:
    """Per user-document: time to completion and time to first interaction.

    Completion is t_l - t_e. First interaction is the first comm_*,
    quickscroll_*, text_selection, or page_view beyond the initial render,
    relative to t_e; pairs without one are flagged. Windows with a missing
    doc_leave are reported (completion undefined for them only when the
    window could not be synthesized at all).
    """
    windows, issues = session_windows(events)
    by_pair = _by_pair(events)
    records = []
    for w in windows:
        first: int | None = None
        initial_render_seen = False
        for e in by_pair[(w.user_id, w.document_id)]:
            if not w.t_e <= e["ts"] <= w.t_l or e["type"] not in INTERACTION_TYPES:
                continue
            if e["type"] == "page_view" and not initial_render_seen:
                initial_render_seen = True
                continue
            first = e["ts"] - w.t_e
            break
        records.append(
            {
                "userId": w.user_id,
                "documentId": w.document_id,
                "timeToCompletionMs": w.t_l - w.t_e,
                "timeToFirstInteractionMs": first,
                "syntheticLeave": w.synthetic_leave,
            }
        )
    completions = [r["timeToCompletionMs"] for r in records]
    firsts = [
        r["timeToFirstInteractionMs"]
        for r in records
        if r["timeToFirstInteractionMs"] is not None
    ]
    return {
        "records": records,
        "medianTimeToCompletionMs": statistics.median(completions) if completions else None,
        "medianTimeToFirstInteractionMs": statistics.median(firsts) if firsts else None,
        "issues": issues,
    }


def deletion_rate(events: list[Event]) -> float:
    """comm_delete count over comm_create count; 0.0 with no creations."""
    creates = sum(1 for e in events if e["type"] == "comm_create")
    deletes = sum(1 for e in events if e["type"] == "comm_delete")
    return deletes / creates if creates else 0.0


def analyze_bundle(bundle: dict, *, bins: int = 10) -> dict:
    """The full metrics report for an export bundle's event log."""
    events = bundle.get("behavior_events", [])
    windows, _ = session_windows(events)
    per_window = [
        {
            "userId": w.user_id,
            "documentId": w.document_id,
            "values": {str(k): v for k, v in sorted(page_reading_times(events, w).items())},
        }
        for w in windows
    ]
    by_doc: dict[str, dict[int, list[float]]] = defaultdict(lambda: defaultdict(list))
    for w in windows:
        for page, share in page_reading_times(events, w).items():
            by_doc[w.document_id][page].append(share)
    median_by_document = {
        doc: {str(p): statistics.median(vals) for p, vals in sorted(pages.items())}
        for doc, pages in sorted(by_doc.items())
    }
    return {
        "reltime_histogram": reltime_histogram(events, bins),
        "page_reading_times": {
            "perWindow": per_window,
            "medianByDocument": median_by_document,
        },
        "task_timings": task_timings(events),
        "deletion_rate": deletion_rate(events),
    }
