use super::{NetError, RoadNetwork};

/// Parses and validates the native JSON network format.
pub fn load_native(text: &str) -> Result<RoadNetwork, NetError> {
    let net: RoadNetwork = serde_json::from_str(text).map_err(|e| NetError::Format(e.to_string()))?;
    net.validate()?;
    Ok(net)
}

pub fn save_native(net: &RoadNetwork) -> String {
    serde_json::to_string_pretty(net).expect("network serialization is infallible")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roadnet::grid_generate;

    #[test]
    fn round_trip_grid() {
        let net = grid_generate(2, 2, 6).unwrap();
        let text = save_native(&net);
        let back = load_native(&text).unwrap();
        assert_eq!(back, net);
        let a: serde_json::Value = serde_json::from_str(&text).unwrap();
        let b: serde_json::Value = serde_json::from_str(&save_native(&back)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_key_is_named() {
        let net = grid_generate(1, 1, 3).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&save_native(&net)).unwrap();
        v.as_object_mut().unwrap().remove("intersections");
        let err = load_native(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("intersections"), "{err}");
    }

    #[test]
    fn bad_field_type_is_named() {
        let net = grid_generate(1, 1, 3).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&save_native(&net)).unwrap();
        v["segments"][0]["cell_count"] = serde_json::json!("ten");
        let err = load_native(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("invalid type"), "{err}");
        v["segments"][0]["cell_count"] = serde_json::json!(3);
        v["segments"][0]["lanes"] = serde_json::json!(2);
        let err = load_native(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("lanes"), "{err}");
    }
}
