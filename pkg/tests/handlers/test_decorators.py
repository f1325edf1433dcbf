"""
Tests for multipolicy_eval.handlers.decorators module.
"""

import json

from multipolicy_eval.handlers.base import json_response
from multipolicy_eval.handlers.decorators import require_mdp, require_policies, require_valid_arguments
from multipolicy_eval.protocol.errors import ErrorCode
from multipolicy_eval.protocol.types import EvalArguments, ValidateArguments


@require_valid_arguments(ValidateArguments)
def echo_handler(args):
    """Test handler that returns the validated arguments."""
    return json_response({"mdp": str(args.mdp), "policies": None if args.policies is None else str(args.policies)})


@require_valid_arguments(EvalArguments)
@require_mdp
@require_policies
def loading_handler(args, *, mdp, policies):
    """Test handler that reports what was injected."""
    return json_response({"shape": list(mdp.shape), "count": len(policies)})


def payload(result):
    return json.loads(result[0].text)


class TestRequireValidArguments:
    """Tests for require_valid_arguments decorator."""

    def test_passes_validated_model(self):
        """Test that valid arguments reach the handler as a model."""
        assert payload(echo_handler({"mdp": "m.json"})) == {"mdp": "m.json", "policies": None}

    def test_missing_field(self):
        """Test that a missing required field becomes an error payload."""
        response = payload(echo_handler({}))
        assert response["error"] == "Invalid arguments"
        assert response["code"] == ErrorCode.INVALID_PARAMS
        assert response["details"][0]["field"] == "mdp"

    def test_unknown_field(self):
        """Test that unknown fields are rejected."""
        response = payload(echo_handler({"mdp": "m.json", "colour": "blue"}))
        assert response["code"] == ErrorCode.INVALID_PARAMS
        assert response["details"][0]["field"] == "colour"

    def test_preserves_metadata(self):
        """Test that functools.wraps keeps the handler name."""
        assert echo_handler.__name__ == "echo_handler"


class TestRequireModelFiles:
    """Tests for require_mdp and require_policies."""

    def test_injects_model_and_policies(self, model_files):
        """Test that loaded files are injected as keyword arguments."""
        mdp_path, policies_path = model_files
        arguments = {"mdp": str(mdp_path), "policies": str(policies_path), "epsilon": 0.1, "delta": 0.1}
        assert payload(loading_handler(arguments)) == {"shape": [2, 2, 2], "count": 3}

    def test_missing_model_file(self, tmp_path, model_files):
        """Test that a missing MDP file becomes a file-not-found payload."""
        _, policies_path = model_files
        missing = tmp_path / "nowhere.json"
        arguments = {"mdp": str(missing), "policies": str(policies_path), "epsilon": 0.1, "delta": 0.1}
        response = payload(loading_handler(arguments))
        assert response["error"] == f"File not found: {missing}"
        assert response["code"] == ErrorCode.INTERNAL_ERROR

    def test_invalid_policy_file(self, tmp_path, model_files):
        """Test that a policy file of the wrong shape is reported as an invalid model."""
        mdp_path, _ = model_files
        policies_path = tmp_path / "wrong.json"
        policies_path.write_text(json.dumps({"horizon": 2, "table": [[[1.0]], [[1.0]]]}))
        arguments = {"mdp": str(mdp_path), "policies": str(policies_path), "epsilon": 0.1, "delta": 0.1}
        response = payload(loading_handler(arguments))
        assert response["code"] == ErrorCode.INVALID_MODEL
        assert "policy_shape" in response["error"]
