"""The HTTP surface: POST /v1/score and GET /v1/health."""

import logging

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool

from .model import Classifier
from .protocol import BadRequest, class_index, decode_request

logger = logging.getLogger("risekit_server")


def create_app(classifier: Classifier) -> FastAPI:
    app = FastAPI(title="risekit scoring server", docs_url=None, redoc_url=None)
    max_batch = classifier.config.max_batch

    @app.get("/v1/health")
    def health() -> dict:
        return {"status": "ok", "model": classifier.name}

    @app.post("/v1/score")
    async def score(request: Request) -> Response:
        body = await request.body()
        try:
            batch, target = decode_request(body)
        except BadRequest as exc:
            return JSONResponse({"detail": str(exc)}, status_code=400)
        if batch.shape[0] > max_batch:
            return JSONResponse(
                {"detail": f"batch {batch.shape[0]} exceeds limit {max_batch}"},
                status_code=413,
            )
        if target.get("kind") != "class_index":
            return JSONResponse(
                {"detail": "conditional targets need a captioning model"},
                status_code=501,
            )
        try:
            index = class_index(target)
        except BadRequest as exc:
            return JSONResponse({"detail": str(exc)}, status_code=400)
        try:
            scores = await run_in_threadpool(classifier.class_scores, batch, index)
        except IndexError as exc:
            return JSONResponse({"detail": str(exc)}, status_code=400)
        except Exception:
            logger.exception("inference failed")
            return JSONResponse({"detail": "internal error"}, status_code=500)
        return JSONResponse({"scores": scores})

    return app
