use gridshaper::{controller::ControllerConfig, fixtures};
fn main() {
    let d = std::path::Path::new("data");
    std::fs::write(d.join("feeder12.json"), fixtures::feeder12().to_json() + "\n").unwrap();
    std::fs::write(d.join("feeder6.json"), fixtures::feeder6().to_json() + "\n").unwrap();
    std::fs::write(d.join("default.json"), ControllerConfig::default().to_json() + "\n").unwrap();
    let mut s = fixtures::benchmark_scenario();
    s.network = Some("feeder12.json".into());
    s.config = Some("default.json".into());
    std::fs::write(d.join("benchmark.json"), s.to_json() + "\n").unwrap();
    let mut s = fixtures::evening_peak_scenario();
    s.network = Some("feeder12.json".into());
    s.config = Some("default.json".into());
    std::fs::write(d.join("evening_peak.json"), s.to_json() + "\n").unwrap();
}
