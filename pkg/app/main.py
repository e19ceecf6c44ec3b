import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI

from app.api.routes import router
from app.cache import db as cache_db
from app.core.logging import setup_logging

logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    """
    Application lifespan handler.
    Initialize resources on startup, cleanup on shutdown.
    """
    setup_logging()
    logger.info("Initializing Few-shot Evaluation Engine...")
    cache_db.init_db()
    logger.info("Result cache initialized")

    yield

    logger.info("Shutting down Few-shot Evaluation Engine...")


app = FastAPI(
    title="Few-shot Evaluation Engine",
    description="Episodic evaluation of NCM and soft K-means classifiers over extracted feature banks",
    version="1.0.0",
    lifespan=lifespan
)

app.include_router(router)


@app.get("/")
async def root():
    """Root endpoint with basic info"""
    return {
        "service": "Few-shot Evaluation Engine",
        "version": "1.0.0",
        "endpoints": {
            "evaluate": "POST /evaluate",
            "sweep": "POST /sweep",
            "ablation": "POST /ablation",
            "format": "GET /format",
            "health": "GET /health",
            "cache_stats": "GET /cache/stats"
        }
    }
