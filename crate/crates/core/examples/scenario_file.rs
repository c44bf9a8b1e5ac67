//! Scenarios from JSON, with validation errors reported per field.

use uavmec::scenario::Scenario;

fn main() {
    let ok = r#"{"s_k": [[-5, -9], [5, -12]], "L": 4, "H": 10, "P_uav_max": 20}"#;
    match Scenario::from_json(ok) {
        Ok(s) => println!("K = {}, L = {}, N = {}, H = {} m", s.num_ges(), s.uav_antennas, s.num_slots(), s.altitude),
        Err(e) => println!("error: {e}"),
    }
    let bad = r#"{"s_k": [[-5, -9]], "L": 0, "Vmax": 0.1}"#;
    if let Err(e) = Scenario::from_json(bad) {
        println!("rejected: {e}");
    }
}
