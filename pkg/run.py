import argparse
import os
import sys

COMMANDS = ["quantize-search", "verify", "plan", "rollout"]


def parse_args():
    parser = argparse.ArgumentParser(description="Run one command of the RBD quantization lab")
    parser.add_argument("command", choices=COMMANDS, help="Command to run")
    parser.add_argument("--config", default="configs/iiwa_pid.toml", help="Run configuration (TOML)")
    parser.add_argument("--out", help="Output directory for artifacts")
    parser.add_argument("--seed", type=int, help="Override the config seed")
    parser.add_argument("--workers", type=int, default=4, help="Number of worker threads")
    parser.add_argument("--log-level", default="info",
                        choices=["trace", "debug", "info", "warning", "error", "critical"],
                        help="Log level")
    parser.add_argument("--log-file", help="Also write logs to this file")
    return parser.parse_args()


if __name__ == "__main__":
    args = parse_args()

    # Set environment variable for custom log level
    if args.log_level.upper() == "TRACE":
        os.environ["LOG_LEVEL"] = "TRACE"
    else:
        os.environ["LOG_LEVEL"] = args.log_level.upper()
    os.environ["RBD_LAB_WORKERS"] = str(args.workers)

    argv = [args.command, "--config", args.config, "--workers", str(args.workers)]
    if args.out:
        argv += ["--out", args.out]
    if args.seed is not None:
        argv += ["--seed", str(args.seed)]
    if args.log_file:
        argv += ["--log-file", args.log_file]

    print("Starting run with configuration:")
    for key, value in vars(args).items():
        print(f"  {key}: {value}")

    # app.config reads the environment at import time
    from app.cli import main

    sys.exit(main(argv))
