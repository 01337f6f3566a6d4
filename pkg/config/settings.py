"""Configuration settings for Vessel Tracer."""

import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Logging
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")

# External embedder
EXTERNAL_EMBEDDER_ENDPOINT = os.getenv("EXTERNAL_EMBEDDER_ENDPOINT")
EXTERNAL_EMBEDDER_TIMEOUT = int(os.getenv("EXTERNAL_EMBEDDER_TIMEOUT", "30"))

# Embedding reply cache
EMBED_CACHE_DB_PATH = os.getenv("EMBED_CACHE_DB_PATH", "embed_cache.db")
EMBED_CACHE_TTL_HOURS = int(os.getenv("EMBED_CACHE_TTL_HOURS", "24"))

# Tracing
TRACE_JOBS = int(os.getenv("TRACE_JOBS", "1"))
