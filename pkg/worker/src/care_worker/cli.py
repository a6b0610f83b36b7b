"""Container-friendly entry point; flags override CARE_* environment."""

from __future__ import annotations

import argparse
import asyncio
import logging
import os
import sys

from care_worker.skills import SKILL_SPECS
from care_worker.worker import FatalWorkerError, WorkerConfig, run_worker


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Reference assistance worker (self-registering)."
    )
    parser.add_argument(
        "--broker-url",
        default=os.environ.get("CARE_BROKER_URL", "ws://127.0.0.1:8700/broker"),
    )
    parser.add_argument("--token", default=os.environ.get("CARE_BROKER_TOKEN", ""))
    parser.add_argument(
        "--skill",
        dest="skills",
        action="append",
        choices=sorted(SKILL_SPECS),
        help="serve only these skills (default: all)",
    )
    parser.add_argument("--node-id", default=os.environ.get("CARE_WORKER_NODE_ID"))
    parser.add_argument("--parallelism", type=int,
                        default=int(os.environ.get("CARE_WORKER_PARALLELISM", "1")))
    parser.add_argument("--model-hook", default=os.environ.get("CARE_WORKER_MODEL_HOOK"),
                        help="module:function replacing the rule-based stubs")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")
    try:
        config = WorkerConfig(
            broker_url=args.broker_url,
            token=args.token,
            skills=args.skills or list(SKILL_SPECS),
            node_id=args.node_id,
            parallelism=args.parallelism,
            model_hook=args.model_hook,
        )
        asyncio.run(run_worker(config))
    except FatalWorkerError as exc:
        print(f"fatal: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
