use serde_json::{json, Value};

pub const SCHEMA_VERSION: &str = "1.0.0";

fn point() -> Value {
    json!({ "type": "array", "items": { "type": "number" }, "minItems": 2, "maxItems": 2 })
}

fn nullable_number() -> Value {
    json!({ "type": ["number", "null"] })
}

fn region() -> Value {
    json!({
        "oneOf": [
            {
                "type": "object",
                "required": ["type", "z1_min", "z1_max", "z2_min", "z2_max"],
                "properties": {
                    "type": { "const": "rectangle" },
                    "z1_min": { "type": "number" },
                    "z1_max": { "type": "number" },
                    "z2_min": { "type": "number" },
                    "z2_max": { "type": "number" }
                }
            },
            {
                "type": "object",
                "required": ["type", "vertices"],
                "properties": {
                    "type": { "const": "polygon" },
                    "vertices": { "type": "array", "items": point(), "minItems": 3 }
                }
            }
        ]
    })
}

fn config() -> Value {
    json!({
        "type": "object",
        "description": "Experiment configuration. Every field is optional and falls back to its default.",
        "properties": {
            "acquisition": {
                "type": "object",
                "properties": {
                    "kind": { "enum": ["ei", "ucb", "mu"], "default": "ei" },
                    "beta": { "type": "number", "minimum": 0, "default": 2.0 },
                    "xi": { "type": "number", "minimum": 0, "default": 0.0 },
                    "direction": { "enum": ["maximize", "minimize"], "default": "maximize" }
                }
            },
            "seed_model": { "enum": ["gd", "ud", "uls", "random"], "default": "gd" },
            "n_seed": { "type": "integer", "minimum": 2, "default": 5 },
            "budget": { "type": "integer", "minimum": 2, "default": 100 },
            "scalarizer": { "enum": ["area", "height", "imprint"], "default": "area" },
            "surrogate": {
                "type": "object",
                "properties": {
                    "init_iters": { "type": "integer", "minimum": 0, "default": 200 },
                    "retrain_iters": { "type": "integer", "minimum": 0, "default": 50 },
                    "step_size": { "type": "number", "exclusiveMinimum": 0, "default": 0.01 }
                }
            },
            "stagnation": {
                "type": "object",
                "properties": {
                    "window": { "type": "integer", "minimum": 2, "default": 10 },
                    "radius_pct": { "type": "number", "exclusiveMinimum": 0, "maximum": 100, "default": 5.0 },
                    "frac": { "type": "number", "exclusiveMinimum": 0, "maximum": 1, "default": 0.8 },
                    "consecutive": { "type": "integer", "minimum": 1, "default": 2 }
                }
            },
            "sampling": {
                "type": "object",
                "properties": {
                    "support_threshold": { "type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1, "default": 0.05 },
                    "bbox_margin": { "type": "number", "minimum": 0, "default": 0.05 }
                }
            },
            "master_seed": { "type": "integer", "minimum": 0, "default": 0 }
        }
    })
}

fn intervention() -> Value {
    json!({
        "type": "object",
        "required": ["spec"],
        "properties": {
            "n_points": { "type": "integer", "minimum": 1, "default": 5 },
            "spec": {
                "oneOf": [
                    {
                        "type": "object",
                        "required": ["kind"],
                        "properties": {
                            "kind": { "const": "exclusion" },
                            "centers": { "type": ["array", "null"], "items": point() },
                            "radius": { "type": ["number", "null"], "exclusiveMinimum": 0 },
                            "base": { "enum": ["gd", "ud", "uls"], "default": "ud" }
                        }
                    },
                    {
                        "type": "object",
                        "required": ["kind", "region"],
                        "properties": {
                            "kind": { "const": "prioritizing" },
                            "region": region(),
                            "bandwidth": { "type": ["number", "null"], "exclusiveMinimum": 0 }
                        }
                    }
                ]
            }
        }
    })
}

fn trace_record() -> Value {
    json!({
        "type": "object",
        "required": ["step", "index", "row", "col", "z", "value", "pixel", "source"],
        "properties": {
            "step": { "type": "integer" },
            "index": { "type": "integer" },
            "row": { "type": "integer" },
            "col": { "type": "integer" },
            "z": point(),
            "value": { "type": "number" },
            "pixel": { "type": "integer" },
            "source": { "enum": ["seed", "bo", "intervention"] }
        }
    })
}

fn snapshot() -> Value {
    json!({
        "type": "object",
        "required": [
            "id", "created_at", "status", "config", "exam_mode", "n_seed", "budget", "measured_count",
            "steps_completed", "curve_length", "stagnant", "trace", "prediction", "exclusion_default_radius"
        ],
        "properties": {
            "id": { "type": "string" },
            "created_at": { "type": "integer", "description": "Unix seconds" },
            "status": { "enum": ["running", "budget_exhausted", "paused"] },
            "config": config(),
            "exam_mode": { "type": "boolean" },
            "n_seed": { "type": "integer" },
            "budget": { "type": "integer" },
            "measured_count": { "type": "integer" },
            "steps_completed": { "type": "integer" },
            "curve_length": { "type": "integer" },
            "stagnant": { "type": "boolean" },
            "trace": { "type": "array", "items": trace_record() },
            "prediction": {
                "type": "object",
                "required": ["mean_sigma", "max_sigma", "argmax_sigma", "mean_min", "mean_max", "best_measured", "best_index", "mae"],
                "properties": {
                    "mean_sigma": { "type": "number" },
                    "max_sigma": { "type": "number" },
                    "argmax_sigma": { "type": "integer" },
                    "mean_min": { "type": "number" },
                    "mean_max": { "type": "number" },
                    "best_measured": nullable_number(),
                    "best_index": { "type": ["integer", "null"] },
                    "mae": { "type": ["number", "null"], "description": "Simulator only; null in exam mode" }
                }
            },
            "exclusion_default_radius": { "type": "number" }
        }
    })
}

fn event() -> Value {
    json!({
        "type": "object",
        "description": "Server-sent event `step`; the SSE id is the step number.",
        "required": ["step", "source", "index", "row", "col", "z", "value", "mean_sigma", "stagnant", "status"],
        "properties": {
            "step": { "type": "integer", "minimum": 1 },
            "source": { "enum": ["bo", "intervention"] },
            "index": { "type": "integer" },
            "row": { "type": "integer" },
            "col": { "type": "integer" },
            "z": point(),
            "value": { "type": "number" },
            "mean_sigma": { "type": "number", "minimum": 0 },
            "stagnant": { "type": "boolean" },
            "status": { "enum": ["running", "budget_exhausted", "paused"] }
        }
    })
}

fn curve() -> Value {
    let q = json!({ "type": "number" });
    json!({
        "type": "object",
        "required": ["exam_mode", "steps"],
        "properties": {
            "exam_mode": { "type": "boolean" },
            "steps": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["step", "mean_sigma", "sigma_of_sigma", "quantiles"],
                    "properties": {
                        "step": { "type": "integer" },
                        "mean_sigma": { "type": "number" },
                        "sigma_of_sigma": { "type": "number" },
                        "mae": { "type": "number", "description": "Absent in exam mode" },
                        "quantiles": {
                            "type": "object",
                            "required": ["p5", "p25", "p50", "p75", "p95"],
                            "properties": { "p5": q, "p25": q, "p50": q, "p75": q, "p95": q }
                        }
                    }
                }
            }
        }
    })
}

/// Every published schema, keyed by name.
pub fn schema_document() -> Value {
    let draft = "https://json-schema.org/draft/2020-12/schema";
    let mut schemas = json!({
        "config": config(),
        "snapshot": snapshot(),
        "intervention": intervention(),
        "event": event(),
        "curve": curve(),
        "region": region(),
    });
    for (name, s) in schemas.as_object_mut().expect("object").iter_mut() {
        s["$schema"] = json!(draft);
        s["$id"] = json!(format!("aesim/{SCHEMA_VERSION}/{name}"));
    }
    json!({ "version": SCHEMA_VERSION, "schemas": schemas })
}
