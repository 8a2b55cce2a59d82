"""HTTP routes that let external trainers drive episodes step by step."""

from __future__ import annotations

import logging

import azure.functions as func
from azure_functions_openapi.decorator import openapi as openapi_doc

from app import app
from app.dependencies import (
    ERROR,
    EpisodeTerminated,
    UserError,
    action_from_payload,
    evaluate_episode,
    get_bundle,
    get_bundle_registry,
    get_episode_config,
    get_provider_bundle,
    get_session_service,
    start_episode,
    step,
    user_from_payload,
)
from app.errors import handle_episode_error
from app.models import (
    BundleListResponse,
    EpisodeCreateRequest,
    EpisodeCreateResponse,
    EvalResponse,
    MessageResponse,
    StepRequest,
    StepResponse,
)
from app.responses import json_message, json_payload, state_text
from core.episode import SYSTEM, TERMINAL, Observation, tool_specs
from core.state import canonical_serialize

_SESSION_PARAMETER = {
    "name": "session_id",
    "in": "path",
    "required": True,
    "schema": {"type": "string"},
    "description": "Session identifier returned when the episode was created.",
}


def _session_id(req: func.HttpRequest) -> str:
    return (req.route_params.get("session_id") or "").strip()


def _read_json(req: func.HttpRequest):
    try:
        return req.get_json()
    except ValueError:
        return None


def _handle_create(req: func.HttpRequest) -> func.HttpResponse:
    logging.info("[episodes] Creating episode session.")
    payload = _read_json(req)
    if not isinstance(payload, dict):
        return json_message("Invalid JSON payload.", status_code=400)

    try:
        request = EpisodeCreateRequest.model_validate(payload)
        bundle = get_bundle(request.bundle_id)
        user = user_from_payload(request.user, get_provider_bundle(), seed=request.seed)
        episode = start_episode(bundle, user, get_episode_config(), seed=request.seed)
    except UserError as exc:
        logging.warning("[episodes] Simulated user failed to open the conversation: %s", exc)
        return json_message("Simulated user is unavailable.", status_code=502)
    except Exception as exc:
        return handle_episode_error(exc, log_prefix="episodes")

    record = get_session_service().create(episode)
    body = {
        "session_id": record.session_id,
        "system_message": episode.history[0].content,
        "tool_specs": tool_specs(bundle),
        "messages": [message.to_dict() for message in episode.history if message.role != SYSTEM],
        "terminated": episode.terminated,
    }
    return json_payload(body, status_code=201)


@app.function_name(name="create_episode")
@app.route(route="episodes", methods=[func.HttpMethod.POST])
@openapi_doc(
    summary="Open an episode session",
    description="Restores the bundle's initial state, seeds the conversation and returns the toolset the agent may call.",
    tags=["Episodes"],
    request_model=EpisodeCreateRequest,
    response_model=EpisodeCreateResponse,
    operation_id="createEpisode",
    route="/episodes",
    method="post",
)
def create_episode(req: func.HttpRequest) -> func.HttpResponse:
    """Open a new episode session."""

    return _handle_create(req)


def _handle_step(req: func.HttpRequest) -> func.HttpResponse:
    session_id = _session_id(req)
    payload = _read_json(req)
    if not isinstance(payload, dict):
        return json_message("Invalid JSON payload.", status_code=400)

    try:
        action = action_from_payload(StepRequest.model_validate(payload).action)
        record = get_session_service().get(session_id)
    except Exception as exc:
        return handle_episode_error(exc, log_prefix="episodes")

    with record.lock:
        episode = record.episode
        try:
            observation = step(episode, action)
        except UserError as exc:
            logging.warning("[episodes] Session %s: simulated user failed: %s", session_id, exc)
            episode.terminate(ERROR)
            observation = Observation(TERMINAL)
        except (EpisodeTerminated, ValueError) as exc:
            return handle_episode_error(exc, log_prefix="episodes")
        body = {
            "observation": observation.to_dict(),
            "terminated": episode.terminated,
            "stop_reason": episode.stop_reason,
        }
    return json_payload(body)


@app.function_name(name="step_episode")
@app.route(route="episodes/{session_id}/step", methods=[func.HttpMethod.POST])
@openapi_doc(
    summary="Apply one agent action",
    description="Executes a tool batch or delivers a response to the simulated user. Steps after termination return 409.",
    tags=["Episodes"],
    parameters=[_SESSION_PARAMETER],
    request_model=StepRequest,
    response_model=StepResponse,
    operation_id="stepEpisode",
    route="/episodes/{session_id}/step",
    method="post",
)
def step_episode(req: func.HttpRequest) -> func.HttpResponse:
    """Advance an episode by one action."""

    return _handle_step(req)


def _handle_state(req: func.HttpRequest) -> func.HttpResponse:
    try:
        record = get_session_service().get(_session_id(req))
    except Exception as exc:
        return handle_episode_error(exc, log_prefix="episodes")
    with record.lock:
        text = canonical_serialize(record.episode.env)
    return state_text(text)


@app.function_name(name="episode_state")
@app.route(route="episodes/{session_id}/state", methods=[func.HttpMethod.GET])
@openapi_doc(
    summary="Read the episode's database",
    description="Returns the canonical text of the current environment state.",
    tags=["Episodes"],
    parameters=[_SESSION_PARAMETER],
    operation_id="getEpisodeState",
    route="/episodes/{session_id}/state",
    method="get",
)
def episode_state(req: func.HttpRequest) -> func.HttpResponse:
    """Return the current canonical state text."""

    return _handle_state(req)


def _handle_evaluate(req: func.HttpRequest) -> func.HttpResponse:
    try:
        record = get_session_service().get(_session_id(req))
    except Exception as exc:
        return handle_episode_error(exc, log_prefix="episodes")
    with record.lock:
        episode = record.episode
        body = evaluate_episode(episode).to_dict()
        if episode.stop_reason == ERROR:
            body["reward"] = 0
        body["stop_reason"] = episode.stop_reason
        body["turns"] = episode.turn
    return json_payload(body)


@app.function_name(name="evaluate_episode")
@app.route(route="episodes/{session_id}/evaluate", methods=[func.HttpMethod.POST])
@openapi_doc(
    summary="Score the episode against its ground truth",
    description="Compares the current state with the bundle's ground-truth state under its reward policies.",
    tags=["Episodes"],
    parameters=[_SESSION_PARAMETER],
    response_model=EvalResponse,
    operation_id="evaluateEpisode",
    route="/episodes/{session_id}/evaluate",
    method="post",
)
def evaluate_episode_route(req: func.HttpRequest) -> func.HttpResponse:
    """Evaluate the current state."""

    return _handle_evaluate(req)


def _handle_delete(req: func.HttpRequest) -> func.HttpResponse:
    session_id = _session_id(req)
    try:
        get_session_service().delete(session_id)
    except Exception as exc:
        return handle_episode_error(exc, log_prefix="episodes")
    logging.info("[episodes] Closed session %s.", session_id)
    return func.HttpResponse(status_code=204)


@app.function_name(name="delete_episode")
@app.route(route="episodes/{session_id}", methods=[func.HttpMethod.DELETE])
@openapi_doc(
    summary="Close an episode session",
    description="Discards the session and its in-memory state.",
    tags=["Episodes"],
    parameters=[_SESSION_PARAMETER],
    response_model=MessageResponse,
    operation_id="deleteEpisode",
    route="/episodes/{session_id}",
    method="delete",
)
def delete_episode(req: func.HttpRequest) -> func.HttpResponse:
    """Delete an episode session."""

    return _handle_delete(req)


@app.function_name(name="list_bundles")
@app.route(route="bundles", methods=[func.HttpMethod.GET])
@openapi_doc(
    summary="List served bundles",
    description="Identifiers of every task bundle loaded by this server.",
    tags=["Episodes"],
    response_model=BundleListResponse,
    operation_id="listBundles",
    route="/bundles",
    method="get",
)
def list_bundles(req: func.HttpRequest) -> func.HttpResponse:
    """List the bundle identifiers this server can open."""

    return json_payload({"bundles": sorted(get_bundle_registry())})
