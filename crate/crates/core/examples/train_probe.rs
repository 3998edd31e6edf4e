//! Training-curve probe: train a preset's model and print the loss
//! history head/tail plus the calibrated bound.

use softctrl::harness::{collect_trajectories, collection_stream, preset};
use softctrl::model::{calibrate_error_bound, train_with_history, Architecture, Dataset};

fn main() {
    let name = std::env::args().nth(1).expect("usage: train_probe <preset>");
    let scenario = preset(&name).unwrap();
    let rig = scenario
        .model
        .collect
        .plant
        .clone()
        .unwrap_or_else(|| scenario.plant.clone());
    let stream = collection_stream(scenario.seed);
    let trajectories = collect_trajectories(&rig, &scenario.model.collect, scenario.dt, &stream);
    let dataset = Dataset::split_every(trajectories, scenario.model.collect.val_every);
    let arch = Architecture::with_hidden(rig.xdim(), rig.udim(), scenario.model.hidden.clone());
    let (params, history) =
        train_with_history(&dataset, arch, &scenario.model.hyper(scenario.seed)).unwrap();
    let n = history.len();
    eprintln!("epochs recorded: {n}");
    for (i, l) in history.iter().enumerate() {
        if i < 12 || i + 5 >= n || i % 25 == 0 {
            eprintln!("  epoch {i:4}: loss {l:.6e}");
        }
    }
    let bound = calibrate_error_bound(&params, &dataset.validation, scenario.dt).unwrap();
    eprintln!("eps_bar {:.6e}", bound.epsilon);
}
