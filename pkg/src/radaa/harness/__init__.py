from radaa.harness.scenarios import (
    FAULT_ROWS,
    IncompleteMatrix,
    ResilienceMatrix,
    Scenario,
    ScenarioResult,
    harness_config,
    new_deployment,
    render_json,
    render_matrix,
    run_all,
    run_scenario,
)

__all__ = [
    "FAULT_ROWS", "IncompleteMatrix", "ResilienceMatrix", "Scenario", "ScenarioResult", "harness_config",
    "new_deployment", "render_json", "render_matrix", "run_all", "run_scenario",
]
