//! Vehicle plant, scenario description and the convoy simulator.

mod engine;
pub mod live;
mod plant;
pub mod scenario;
pub mod trace;

pub use engine::{
    run_scenario, run_scenario_detailed, LinkReport, SimError, SimRun, VehicleController,
};
pub use live::{run_live, LiveOptions, LiveReport};
pub use plant::{bicycle_step, PlantParams, Pose};
pub use scenario::{ScenarioConfig, ScenarioError, TransportKind, BUNDLED_SCENARIO};
pub use trace::{LinkSample, Trace, TraceError, TraceRow, VehicleSample};
