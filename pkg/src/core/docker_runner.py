# src/core/docker_runner.py - Optional container backend for confined execution
# The jail is bind-mounted read-write; the container never gets a network.

import logging
import os
import uuid
from functools import lru_cache
from pathlib import Path
from typing import Optional

import docker
from docker.errors import APIError, DockerException, ImageNotFound
from requests.exceptions import ConnectionError, ReadTimeout

from ..models.execution import TIMEOUT_EXIT_STATUS, ExecPolicy, sanitize_session_id
from .errors import SpawnError

logger = logging.getLogger(__name__)

# --- Configuration ---
WORKSPACE_DIR_INSIDE_CONTAINER = "/workspace"
DEFAULT_NETWORK_MODE = "none"
CONTAINER_NAME_PREFIX = "hyperedge-sandbox-"


@lru_cache(maxsize=1)
def get_docker_client() -> docker.DockerClient:
    try:
        client = docker.from_env()
        client.ping()
    except DockerException as e:
        logger.error(f"Container Backend: Docker daemon unreachable: {e}")
        raise SpawnError(f"Container backend unavailable: {e}", {"backend": "container"})
    logger.info("Container Backend: Docker client initialized and connected.")
    return client


def container_environment(policy: ExecPolicy) -> dict[str, str]:
    return {name: os.environ[name] for name in policy.env_passthrough if name in os.environ}


async def run_in_container(
    argv: list[str],
    policy: ExecPolicy,
    session_id: Optional[str] = None,
) -> tuple[int, bytes, bytes, bool]:
    """
    Runs argv in a throwaway container with the jail mounted at /workspace.
    Returns exit code, raw stdout, raw stderr and whether the wall timeout fired.
    """
    client = get_docker_client()
    container_name = f"{CONTAINER_NAME_PREFIX}{sanitize_session_id(session_id or 'stateless')}-{uuid.uuid4().hex[:8]}"
    jail = Path(policy.working_root)
    volumes = {str(jail): {"bind": WORKSPACE_DIR_INSIDE_CONTAINER, "mode": "rw"}}
    container = None
    timed_out = False
    exit_code = TIMEOUT_EXIT_STATUS

    try:
        logger.info(f"Container Execution (Session: {session_id}): running {argv} in '{container_name}'")
        container = client.containers.run(
            image=policy.container_image,
            command=argv,
            volumes=volumes,
            environment=container_environment(policy) or None,
            name=container_name,
            working_dir=WORKSPACE_DIR_INSIDE_CONTAINER,
            remove=False,
            detach=True,
            stdout=True,
            stderr=True,
            network_mode=DEFAULT_NETWORK_MODE,
            mem_limit=policy.container_mem_limit,
        )
        try:
            result = container.wait(timeout=policy.wall_timeout)
            exit_code = result.get("StatusCode", -1)
        except (ReadTimeout, ConnectionError):
            logger.warning(f"Container Execution (Session: {session_id}): '{container_name}' exceeded "
                           f"{policy.wall_timeout}s, killing")
            timed_out = True
            try:
                container.kill()
            except APIError as e:
                logger.error(f"Failed to kill container '{container_name}': {e}")

        stdout = container.logs(stdout=True, stderr=False) or b""
        stderr = container.logs(stdout=False, stderr=True) or b""
        return exit_code, stdout, stderr, timed_out

    except ImageNotFound:
        logger.error(f"Container Backend: image '{policy.container_image}' not found")
        raise SpawnError(f"Execution image '{policy.container_image}' not found", {"image": policy.container_image})
    except APIError as e:
        logger.error(f"Docker API error during container run for '{container_name}': {e}", exc_info=True)
        raise SpawnError(f"Docker API error: {e}", {"container": container_name})
    finally:
        if container is not None:
            try:
                container.remove(force=True)
                logger.debug(f"Removed container '{container_name}'")
            except APIError as e:
                logger.error(f"Failed to remove container '{container_name}': {e}")
