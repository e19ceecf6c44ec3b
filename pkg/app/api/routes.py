from fastapi import APIRouter, HTTPException, status
from fastapi.responses import PlainTextResponse

from app.core.errors import EngineError
from app.features.store import FORMAT_DESCRIPTION
from app.schemas import (
    AblationResponse,
    EvaluateRequest,
    EvaluateResponse,
    SweepRequest,
    SweepResponse,
)
from app.services import evaluate as evaluator

router = APIRouter()


def _inputs(request: EvaluateRequest):
    config = request.config
    if not request.features and request.synthetic is None:
        raise HTTPException(
            status_code=status.HTTP_400_BAD_REQUEST,
            detail="Give feature bank paths or a synthetic spec"
        )
    backbones = request.synthetic_backbones
    if config.use_e and request.synthetic is not None and backbones < 2:
        backbones = config.backbones or 2
    return evaluator.resolve_inputs(
        request.features,
        request.base,
        request.synthetic,
        backbones,
        need_base=config.use_c and not config.transductive,
    )


def _http_error(e: EngineError) -> HTTPException:
    return HTTPException(status_code=e.http_status, detail=f"{type(e).__name__}: {e}")


@router.post("/evaluate", response_model=EvaluateResponse)
def evaluate(request: EvaluateRequest):
    """
    Evaluate one pipeline configuration.

    Banks are read from server-side FVB1 paths or generated from an inline
    synthetic spec. Results are cached by content fingerprint when the result
    cache is enabled.
    """
    try:
        inputs = _inputs(request)
        summary, cached = evaluator.evaluate_with_cache(
            inputs.banks, request.config, inputs.base_banks, inputs.pins
        )
        return EvaluateResponse(cached=cached, data=summary)
    except EngineError as e:
        raise _http_error(e)


@router.post("/sweep", response_model=SweepResponse)
def sweep(request: SweepRequest):
    """Evaluate over values of beta, views or backbones with paired seeds"""
    try:
        inputs = _inputs(request)
        rows = evaluator.sweep(
            request.parameter, request.values, inputs.banks, request.config,
            base_banks=inputs.base_banks, pins=inputs.pins,
        )
        return SweepResponse(rows=rows)
    except EngineError as e:
        raise _http_error(e)


@router.post("/ablation", response_model=AblationResponse)
def ablation(request: EvaluateRequest):
    """Evaluate the Y / ASY / EY / EASY variants"""
    try:
        inputs = _inputs(request)
        rows = evaluator.ablation(
            inputs.banks, request.config, base_banks=inputs.base_banks, pins=inputs.pins
        )
        return AblationResponse(rows=rows)
    except EngineError as e:
        raise _http_error(e)


@router.get("/format", response_class=PlainTextResponse)
def feature_format():
    """FVB1 byte layout for external exporters"""
    return FORMAT_DESCRIPTION


@router.get("/cache/stats")
def cache_statistics():
    """Get result cache statistics"""
    try:
        from app.cache.db import get_stats
        return get_stats()
    except Exception as e:
        return {"error": str(e)}


@router.delete("/cache/clear")
def clear_cache():
    """Clear all cached results"""
    try:
        from app.cache.db import clear_all
        clear_all()
        return {"message": "Cache cleared successfully"}
    except Exception as e:
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail=f"Failed to clear cache: {str(e)}"
        )


@router.get("/health")
def health_check():
    """Health check endpoint"""
    return {"status": "healthy", "service": "Few-shot Evaluation Engine"}
