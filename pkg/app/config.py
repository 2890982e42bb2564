import os

from dotenv import load_dotenv

load_dotenv()

# Environment defaults; the run-config file and CLI flags override them
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("LOG_FILE") or None
LOG_MODULES = os.getenv("RBD_LAB_LOG_MODULES", "")
WORKERS = int(os.getenv("RBD_LAB_WORKERS", "4"))
OUTPUT_DIR = os.getenv("RBD_LAB_OUTPUT_DIR", "out")
