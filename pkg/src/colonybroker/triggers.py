"""Server-side workflow triggers: schedules and generators.

Both kinds are rows, not goroutines: a periodic scan (run by the elected
leader only) finds due schedules or full pack batches and submits the
stored workflow. Firing is made exactly-once by the store, not by the
scanner — a schedule advances its deadline with a compare-and-swap, a
generator consumes its packs in the same transaction that submits, so
two overlapping leaders cannot double-fire.

Schedules come in two flavors: a plain interval in seconds, or a 5-field
cron expression (minute hour day-of-month month day-of-week, UTC).
Day-of-month and day-of-week combine with OR when both are restricted,
matching the usual cron behavior.
"""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

from . import workflows
from .errors import InvalidSchedule
from .model import CronDef, GeneratorDef

_FIELD_RANGES = [(0, 59), (0, 23), (1, 31), (1, 12), (0, 7)]
_NS = 10**9


def _parse_field(text: str, lo: int, hi: int) -> frozenset:
    values: set = set()
    for part in text.split(","):
        step = 1
        if "/" in part:
            part, step_text = part.split("/", 1)
            if not step_text.isdigit() or int(step_text) < 1:
                raise InvalidSchedule(f"bad step in cron field: {step_text!r}")
            step = int(step_text)
        if part == "*":
            start, end = lo, hi
        elif "-" in part:
            a, _, b = part.partition("-")
            if not (a.isdigit() and b.isdigit()):
                raise InvalidSchedule(f"bad range in cron field: {part!r}")
            start, end = int(a), int(b)
        elif part.isdigit():
            start = end = int(part)
        else:
            raise InvalidSchedule(f"bad cron field: {part!r}")
        if start < lo or end > hi or start > end:
            raise InvalidSchedule(f"cron value {part!r} outside {lo}-{hi}")
        values.update(range(start, end + 1, step))
    return frozenset(values)


class CronSchedule:
    """Parsed 5-field cron expression."""

    def __init__(self, expr: str):
        fields = expr.split()
        if len(fields) != 5:
            raise InvalidSchedule(
                f"cron expression needs 5 fields (minute hour dom month dow), got {len(fields)}"
            )
        self.expr = expr
        self.minutes, self.hours, self.dom, self.months, dow = (
            _parse_field(f, lo, hi) for f, (lo, hi) in zip(fields, _FIELD_RANGES)
        )
        self.dow = frozenset(d % 7 for d in dow)  # 7 is Sunday, same as 0
        self.dom_any = fields[2] == "*"
        self.dow_any = fields[4] == "*"

    def _day_matches(self, dt: datetime) -> bool:
        dom_ok = dt.day in self.dom
        dow_ok = (dt.weekday() + 1) % 7 in self.dow  # cron counts Sunday as 0
        if self.dom_any and self.dow_any:
            return True
        if self.dom_any:
            return dow_ok
        if self.dow_any:
            return dom_ok
        return dom_ok or dow_ok

    def next_after(self, after_ns: int) -> int:
        """The next matching minute strictly after after_ns, UTC."""
        dt = datetime.fromtimestamp(after_ns // _NS, tz=timezone.utc)
        dt = dt.replace(second=0, microsecond=0) + timedelta(minutes=1)
        limit = dt + timedelta(days=366 * 5)
        while dt < limit:
            if dt.month not in self.months:
                if dt.month == 12:
                    dt = dt.replace(year=dt.year + 1, month=1, day=1, hour=0, minute=0)
                else:
                    dt = dt.replace(month=dt.month + 1, day=1, hour=0, minute=0)
                continue
            if not self._day_matches(dt):
                dt = (dt + timedelta(days=1)).replace(hour=0, minute=0)
                continue
            if dt.hour not in self.hours:
                later = [h for h in self.hours if h > dt.hour]
                if later:
                    dt = dt.replace(hour=min(later), minute=0)
                else:
                    dt = (dt + timedelta(days=1)).replace(hour=0, minute=0)
                continue
            if dt.minute not in self.minutes:
                later = [m for m in self.minutes if m > dt.minute]
                if later:
                    dt = dt.replace(minute=min(later))
                else:
                    dt = (dt + timedelta(hours=1)).replace(minute=0)
                continue
            return int(dt.timestamp()) * _NS
        raise InvalidSchedule(f"cron expression {self.expr!r} never fires")


def next_deadline(cron: CronDef, after_ns: int) -> int:
    """Next firing time strictly after after_ns. Missed occurrences
    coalesce: however long a leader was away, one catch-up fire."""
    if cron.cron_expr:
        return CronSchedule(cron.cron_expr).next_after(after_ns)
    interval_ns = cron.interval * _NS
    base = cron.next_deadline or after_ns
    if base > after_ns:
        return base
    periods = (after_ns - base) // interval_ns + 1
    return base + periods * interval_ns


def validate_cron(cron: CronDef) -> None:
    if bool(cron.interval > 0) == bool(cron.cron_expr):
        raise InvalidSchedule("exactly one of interval or cron expression is required")
    if cron.cron_expr:
        CronSchedule(cron.cron_expr)
    elif cron.interval <= 0:
        raise InvalidSchedule("interval must be positive seconds")
    workflows.validate_workflow(cron.workflow)


def validate_generator(gen: GeneratorDef) -> None:
    if gen.trigger_count < 1:
        raise InvalidSchedule("trigger count must be >= 1")
    if gen.timeout < 0:
        raise InvalidSchedule("generator timeout must be >= 0 seconds")
    workflows.validate_workflow(gen.workflow)


def cron_scan(engine, id_source=None) -> list:
    """Fire every due schedule once. Returns (cron_id, workflow_id) pairs
    for the fires this scanner actually won."""
    now = engine.clock.now_ns()
    fired = []
    for cron in engine.store.due_crons(now):
        advance_to = next_deadline(cron, now)
        processes = workflows.materialize(cron.colony_id, cron.workflow, now, id_source)
        if engine.store.fire_cron(cron.cron_id, cron.next_deadline, advance_to, now, processes):
            for p in processes:
                if not p.wait_for_parents:
                    engine._wake_for(p)
            fired.append((cron.cron_id, processes[0].workflow_id))
    return fired


def generator_scan(engine, id_source=None) -> list:
    """Fire every generator whose unconsumed packs reach the threshold
    (repeatedly, draining multiples), plus stale partial batches when the
    generator sets an inactivity timeout. Pack payloads become the input
    of every workflow root, in arrival order."""
    now = engine.clock.now_ns()
    fired = []
    for gen in engine.store.list_all_generators():
        while True:
            count, oldest, _ = engine.store.pack_stats(gen.generator_id)
            if count >= gen.trigger_count:
                take, floor = gen.trigger_count, gen.trigger_count
            elif (gen.timeout > 0 and 0 < count
                  and oldest + gen.timeout * _NS < now):
                take, floor = count, 1
            else:
                break

            def build(payloads):
                processes = workflows.materialize(
                    gen.colony_id, gen.workflow, now, id_source)
                for p in processes:
                    if not p.parents:
                        p.input = list(payloads)
                return processes

            ids = engine.store.consume_packs_and_submit(
                gen.generator_id, floor, take, now, build)
            if ids is None:
                break
            for pid in ids:
                p = engine.store.get_process(pid)
                if p is not None and not p.wait_for_parents:
                    engine._wake_for(p)
            fired.append((gen.generator_id, ids))
    return fired
