"""colonybroker: a pull-based job broker for distributed executors.

Executors organize into colonies and long-poll a broker for process
assignments drawn from a database-backed priority queue. Every request is
independently authenticated by recovering the signer's identity from an
ECDSA signature. Workflows are DAGs of gated processes; a leader-elected
replica runs the failsafe reaper and the cron/generator trigger engines;
file data moves through a metadata-only filesystem with immutable
revisions and snapshots.
"""

__version__ = "0.1.0"
