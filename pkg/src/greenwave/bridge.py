"""Environment bridge: a versioned NDJSON-over-stdio boundary exposing the
environment lifecycle to external processes (RL frameworks, other runtimes).

One request per line, one response per line. Observations cross the boundary
as flat float arrays in the order given by the `layout` op, so adapters never
hardcode offsets. Values are shortest-round-trip decimal JSON, which is exact
for IEEE doubles.

Ops: hello, layout, make, reset, step, close, stats, shutdown.
A handle is one live environment; use-after-close is an explicit error.
"""
from __future__ import annotations

import json
import sys

from . import __version__
from .contexts import reseed
from .env import EcoDrivingEnv, EpisodeSpec, layout_descriptor

PROTOCOL_NAME = "greenwave-env-bridge"
PROTOCOL_VERSION = 1


def _rss_bytes() -> int:
    try:
        with open("/proc/self/status", encoding="ascii") as fh:
            for line in fh:
                if line.startswith("VmRSS:"):
                    return int(line.split()[1]) * 1024
    except OSError:
        pass
    import resource

    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


class BridgeServer:
    def __init__(self):
        self._envs: dict[int, EcoDrivingEnv] = {}
        self._next_handle = 1

    # each op returns the response body (dict) or raises BridgeError
    def op_hello(self, req):
        return {"protocol": PROTOCOL_NAME, "protocol_version": PROTOCOL_VERSION,
                "package_version": __version__}

    def op_layout(self, req):
        return {"layout": layout_descriptor()}

    def op_make(self, req):
        if "spec_path" in req:
            spec = EpisodeSpec.load(req["spec_path"])
        elif "spec" in req:
            spec = EpisodeSpec.from_payload(req["spec"])
        else:
            raise BridgeError("make requires 'spec' or 'spec_path'")
        if "seed" in req and req["seed"] is not None:
            spec.context = reseed(spec.context, int(req["seed"]))
        handle = self._next_handle
        self._next_handle += 1
        self._envs[handle] = EcoDrivingEnv(spec)
        return {"handle": handle}

    def _env(self, req) -> EcoDrivingEnv:
        handle = req.get("handle")
        env = self._envs.get(handle)
        if env is None:
            raise BridgeError(f"handle {handle!r} is not live (closed or never made)")
        return env

    def op_reset(self, req):
        env = self._env(req)
        obs = env.reset()
        return {"obs": {str(k): o.flatten() for k, o in obs.items()}, "done": env.done}

    def op_step(self, req):
        env = self._env(req)
        actions_raw = req.get("actions")
        if not isinstance(actions_raw, dict):
            raise BridgeError("step requires an 'actions' object")
        live = set(env.live_cv_ids())
        try:
            actions = {int(k): (None if v is None else float(v)) for k, v in actions_raw.items()}
        except (TypeError, ValueError):
            raise BridgeError("actions must map vehicle ids to numbers or null") from None
        if set(actions) != live:
            raise BridgeError(
                f"action count mismatch: expected {len(live)} ids {sorted(live)}, "
                f"got {len(actions)} ids {sorted(actions)}")
        obs, rewards, done, info = env.step(actions)
        return {
            "obs": {str(k): o.flatten() for k, o in obs.items()},
            "rewards": {str(k): r.to_payload() for k, r in rewards.items()},
            "done": done,
            "info": {"exited": sorted(info["exited"]), "throughput": info["throughput"],
                     "fleet_size": info["fleet_size"], "min_ttc": info["min_ttc"],
                     "step_emission_g": info["step_emission_g"]},
        }

    def op_close(self, req):
        handle = req.get("handle")
        if handle not in self._envs:
            raise BridgeError(f"handle {handle!r} is not live (closed or never made)")
        del self._envs[handle]
        return {"closed": handle}

    def op_stats(self, req):
        return {"live_handles": len(self._envs), "rss_bytes": _rss_bytes()}

    def handle_request(self, req: dict) -> dict:
        op = req.get("op")
        fn = getattr(self, f"op_{op}", None)
        if fn is None or op in ("shutdown",):
            raise BridgeError(f"unknown op {op!r}")
        return fn(req)


class BridgeError(Exception):
    pass


def serve(stdin=None, stdout=None) -> None:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    server = BridgeServer()
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        rid = None
        try:
            req = json.loads(line)
            rid = req.get("id")
            if req.get("op") == "shutdown":
                stdout.write(json.dumps({"id": rid, "ok": True, "bye": True}) + "\n")
                stdout.flush()
                return
            body = server.handle_request(req)
            resp = {"id": rid, "ok": True}
            resp.update(body)
        except BridgeError as e:
            resp = {"id": rid, "ok": False,
                    "error": {"type": "BridgeError", "message": str(e)}}
        except Exception as e:
            resp = {"id": rid, "ok": False,
                    "error": {"type": type(e).__name__, "message": str(e)}}
        stdout.write(json.dumps(resp, allow_nan=False) + "\n")
        stdout.flush()


if __name__ == "__main__":
    serve()
