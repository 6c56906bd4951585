"""HTTP+JSON surface: the single interface between users and the cluster.

Authenticated routes validate the bearer session token before touching
anything else; write routes respond only after their events are durable.
A rejected command is a successful filter evaluation and returns 200 with
the verdict, never a transport error.
"""

from __future__ import annotations

from fastapi import Depends, FastAPI, Header, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel

from . import auth as auth_mod
from . import events as ev_mod
from . import jobs as jobs_mod
from .cluster import Cluster
from .jobs import JobState


class RegisterBody(BaseModel):
    username: str
    password: str


class LoginBody(BaseModel):
    username: str
    password: str


class CommandBody(BaseModel):
    line: str


class JobBody(BaseModel):
    script: str


def _http_error(exc: Exception) -> HTTPException:
    if isinstance(exc, (auth_mod.UnknownToken, auth_mod.ExpiredToken,
                        auth_mod.BadCredentials)):
        return HTTPException(status_code=401, detail=str(exc))
    if isinstance(exc, jobs_mod.NotOwner):
        return HTTPException(status_code=403, detail=str(exc))
    if isinstance(exc, jobs_mod.UnknownJob):
        return HTTPException(status_code=404, detail=str(exc))
    if isinstance(exc, auth_mod.DuplicateUsername):
        return HTTPException(status_code=409, detail=str(exc))
    if isinstance(exc, jobs_mod.IllegalTransition):
        return HTTPException(status_code=409, detail=str(exc))
    if isinstance(exc, auth_mod.InvalidUsername):
        return HTTPException(status_code=422, detail={
            "field": "username", "message": str(exc)})
    if isinstance(exc, auth_mod.WeakPassword):
        return HTTPException(status_code=422, detail={
            "field": "password", "message": str(exc)})
    if isinstance(exc, jobs_mod.ScriptParseError):
        return HTTPException(status_code=422, detail={
            "field": "script", "line": exc.line, "message": exc.message})
    if isinstance(exc, jobs_mod.RequestTooLarge):
        return HTTPException(status_code=422, detail={
            "field": "script", "message": str(exc)})
    if isinstance(exc, ev_mod.StorageFailure):
        return HTTPException(status_code=503, detail=str(exc))
    raise exc


def create_app(cluster: Cluster) -> FastAPI:
    app = FastAPI(title="publicmc", version="0.1.0")
    app.state.cluster = cluster
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
        allow_headers=["*"],
    )

    def require_user(authorization: str | None = Header(default=None)) -> str:
        if not authorization or not authorization.lower().startswith("bearer "):
            raise HTTPException(status_code=401,
                                detail="missing bearer session token")
        token = authorization.split(" ", 1)[1].strip()
        try:
            return cluster.validate_session(token)
        except auth_mod.AuthError as exc:
            raise _http_error(exc) from None

    @app.post("/register", status_code=201)
    def register(body: RegisterBody):
        try:
            account = cluster.register_user(body.username, body.password)
        except Exception as exc:
            raise _http_error(exc) from None
        return {"user_id": account.user_id, "username": account.username}

    @app.post("/login")
    def login(body: LoginBody):
        try:
            session = cluster.login(body.username, body.password)
        except Exception as exc:
            raise _http_error(exc) from None
        return {"token": session.token, "user_id": session.user_id,
                "expires_at": session.expires_at}

    @app.post("/logout")
    def logout(user_id: str = Depends(require_user),
               authorization: str | None = Header(default=None)):
        token = authorization.split(" ", 1)[1].strip()
        cluster.logout(token)
        return {"ok": True}

    @app.post("/commands")
    def commands(body: CommandBody, user_id: str = Depends(require_user)):
        try:
            request, verdict, receipt = cluster.submit_command(user_id,
                                                               body.line)
        except Exception as exc:
            raise _http_error(exc) from None
        out = {
            "request_id": request.request_id,
            "verdict": "allowed" if verdict.allowed else "rejected",
            "command_class": verdict.command_class,
            "reason": verdict.reason,
            "detail": verdict.detail,
            "receipt": None,
        }
        if receipt is not None:
            out["receipt"] = {"action": receipt.action,
                              "result": receipt.result,
                              "error": receipt.error}
        return out

    @app.post("/jobs", status_code=201)
    def submit_job(body: JobBody, user_id: str = Depends(require_user)):
        try:
            job_id = cluster.submit_job(user_id, body.script)
        except Exception as exc:
            raise _http_error(exc) from None
        return {"job_id": job_id}

    @app.get("/jobs")
    def list_jobs(owner: str | None = None, state: str | None = None,
                  user_id: str = Depends(require_user)):
        job_state = None
        if state is not None:
            try:
                job_state = JobState(state)
            except ValueError:
                raise HTTPException(status_code=422, detail={
                    "field": "state",
                    "message": f"unknown state {state!r}"}) from None
        jobs = cluster.list_jobs(owner=owner, state=job_state)
        return {"jobs": [j.summary() for j in jobs]}

    @app.get("/jobs/{job_id}")
    def job_detail(job_id: int, user_id: str = Depends(require_user)):
        try:
            job = cluster.get_job(job_id)
        except Exception as exc:
            raise _http_error(exc) from None
        return cluster.job_detail(job)

    @app.get("/jobs/{job_id}/output", response_class=PlainTextResponse)
    def job_output(job_id: int, user_id: str = Depends(require_user)):
        try:
            job = cluster.get_job(job_id)
        except Exception as exc:
            raise _http_error(exc) from None
        if job.spec.owner != user_id:
            raise HTTPException(status_code=403,
                                detail="only the owner may read job output")
        output = cluster.job_output(job)
        if output is None:
            raise HTTPException(status_code=404,
                                detail="job has produced no output yet")
        return output

    @app.delete("/jobs/{job_id}")
    def cancel_job(job_id: int, user_id: str = Depends(require_user)):
        try:
            job = cluster.cancel_job(user_id, job_id)
        except Exception as exc:
            raise _http_error(exc) from None
        return {"job_id": job.job_id, "state": job.state.value}

    @app.get("/nodes")
    def nodes(user_id: str = Depends(require_user)):
        return {"nodes": cluster.pool.snapshot()}

    @app.get("/queue")
    def queue(user_id: str = Depends(require_user)):
        return cluster.queue_snapshot()

    @app.get("/metrics")
    def metrics(user_id: str = Depends(require_user)):
        return cluster.metrics()

    return app
