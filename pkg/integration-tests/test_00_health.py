"""
Health Check Tests

These tests verify that the augbank API starts, answers on its banner
endpoint and can (re)create the experiment registry. They should run
first (hence test_00_).
"""

import pytest

pytestmark = pytest.mark.api


def test_api_is_accessible(client):
    """
    Verify that the service banner is served.

    This is a sanity check that the OpenAPI document loaded and the
    operation ids resolved to handlers.
    """
    response = client.get("/")
    assert response.status_code == 200, \
        f"API returned status {response.status_code}, expected 200"

    data = response.get_json()
    assert "augbank" in data.get("message", ""), f"Unexpected banner: {data}"
    assert data.get("backend"), "Banner does not report the embedding backend"
    print("\n✓ augbank API is accessible")


def test_registry_can_be_created(client):
    """
    Verify that /createdb recreates an empty experiment registry.
    """
    response = client.get("/createdb")
    assert response.status_code == 200, \
        f"Registry creation failed with status {response.status_code}"

    runs = client.get("/experiments/v1").get_json()
    assert runs == {"runs": []}, f"Fresh registry is not empty: {runs}"
    print("\n✓ Experiment registry created")


def test_unknown_route_is_404(client):
    """
    Verify that routes outside the OpenAPI document are not served.
    """
    response = client.get("/bank/v2")
    assert response.status_code == 404, \
        f"Unknown route returned {response.status_code}, expected 404"
