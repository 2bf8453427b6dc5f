use serde_json::{json, Value};

fn body(schema: &str) -> Value {
    json!({"content": {"application/json": {"schema": {"$ref": format!("#/components/schemas/{schema}")}}}})
}

fn ok(schema: &str) -> Value {
    let mut v = body(schema);
    v["description"] = json!("OK");
    v
}

fn error(description: &str) -> Value {
    let mut v = body("Error");
    v["description"] = json!(description);
    v
}

/// OpenAPI 3.0 description of the service, served at `/v1/spec`.
pub fn document() -> Value {
    let any = json!({"type": "object"});
    let nullable_obj = json!({"type": "object", "nullable": true});
    json!({
        "openapi": "3.0.3",
        "info": {"title": "manta", "version": env!("CARGO_PKG_VERSION")},
        "paths": {
            "/v1/compose": {"post": {
                "summary": "Decompose, enhance, retrieve and compose without generating",
                "requestBody": body("RunRequest"),
                "responses": {
                    "200": ok("ComposeResponse"),
                    "400": error("Malformed request or empty prompt"),
                    "502": error("Provider failure, with stage attribution"),
                }
            }},
            "/v1/generate": {"post": {
                "summary": "Run the full pipeline",
                "requestBody": body("RunRequest"),
                "responses": {
                    "200": ok("GenerateResponse"),
                    "202": ok("Job"),
                    "400": error("Malformed request or empty prompt"),
                    "409": error("Backend queue full"),
                    "502": error("Provider or backend failure, with stage attribution"),
                }
            }},
            "/v1/refine": {"post": {
                "summary": "img2img on one image of a stored run, recorded as a child run",
                "requestBody": body("RefineRequest"),
                "responses": {
                    "200": ok("GenerateResponse"),
                    "202": ok("Job"),
                    "400": error("Malformed request"),
                    "404": error("Unknown run or image"),
                    "409": error("Backend queue full"),
                    "502": error("Backend failure"),
                }
            }},
            "/v1/jobs/{id}": {"get": {
                "summary": "Poll an accepted generation",
                "responses": {
                    "200": ok("GenerateResponse"),
                    "202": ok("Job"),
                    "404": error("Unknown job"),
                }
            }},
            "/v1/runs": {"get": {
                "summary": "Stored runs in creation order",
                "responses": {"200": {"description": "OK", "content": {"application/json": {"schema": {
                    "type": "array", "items": {"$ref": "#/components/schemas/RunSummary"}
                }}}}}
            }},
            "/v1/runs/{id}": {"get": {
                "summary": "Full run record",
                "responses": {"200": ok("RunRecord"), "404": error("Unknown run")}
            }},
            "/v1/runs/{id}/images/{index}": {"get": {
                "summary": "Raw image bytes",
                "responses": {
                    "200": {"description": "Image", "content": {"image/png": {}, "image/x-portable-pixmap": {}}},
                    "404": error("Unknown run or image"),
                }
            }},
            "/v1/collections": {"get": {
                "summary": "Loaded collection statistics",
                "responses": {"200": {"description": "OK", "content": {"application/json": {"schema": {
                    "type": "array", "items": {"$ref": "#/components/schemas/CollectionStats"}
                }}}}}
            }},
            "/v1/evaluate": {"post": {
                "summary": "Pairwise judged comparison of the full system against a baseline",
                "requestBody": body("EvaluateRequest"),
                "responses": {"200": ok("EvalReport"), "400": error("Malformed request")}
            }},
        },
        "components": {"schemas": {
            "Error": {
                "type": "object",
                "required": ["error"],
                "properties": {
                    "error": {"type": "string"},
                    "stage": {"type": "string"},
                    "run_id": {"type": "string"},
                }
            },
            "RunRequest": {
                "type": "object",
                "required": ["prompt"],
                "properties": {
                    "prompt": {"type": "string"},
                    "knobs": any,
                    "details": {"type": "integer", "minimum": 0},
                    "scope": {"type": "string", "enum": ["main_only", "main_and_support", "none"]},
                    "concept_map": any,
                    "guardrails": {"type": "object", "properties": {
                        "id_blacklist": {"type": "array", "items": {"type": "string"}},
                        "word_filters": {"type": "array", "items": {"type": "string"}},
                    }},
                    "budget": {"type": "integer", "minimum": 0},
                }
            },
            "RefineRequest": {
                "type": "object",
                "required": ["run_id", "image_index"],
                "properties": {
                    "run_id": {"type": "string"},
                    "image_index": {"type": "integer", "minimum": 0},
                    "denoise": {"type": "number", "minimum": 0, "maximum": 1},
                }
            },
            "EvaluateRequest": {
                "type": "object",
                "required": ["prompts", "against"],
                "properties": {
                    "prompts": {"type": "array", "items": {"type": "string"}},
                    "against": {"type": "string", "enum": ["base", "no-enhance"]},
                    "criteria": {"type": "array", "items": {"type": "string", "enum": ["diversity", "quality", "alignment"]}},
                }
            },
            "ComposeResponse": {
                "type": "object",
                "required": ["concept_map", "selection", "workflow", "tokens", "timings"],
                "properties": {
                    "concept_map": any,
                    "selection": any,
                    "retrieval": nullable_obj,
                    "workflow": any,
                    "tokens": {"$ref": "#/components/schemas/Tokens"},
                    "timings": {"type": "array", "items": any},
                }
            },
            "GenerateResponse": {
                "type": "object",
                "required": ["run_id", "images", "workflow", "tokens"],
                "properties": {
                    "run_id": {"type": "string"},
                    "parent_id": {"type": "string", "nullable": true},
                    "images": {"type": "array", "items": {"$ref": "#/components/schemas/Image"}},
                    "workflow": any,
                    "concept_map": nullable_obj,
                    "selection": nullable_obj,
                    "retrieval": nullable_obj,
                    "tokens": {"$ref": "#/components/schemas/Tokens"},
                }
            },
            "Image": {
                "type": "object",
                "required": ["index", "seed_used", "content_type", "url"],
                "properties": {
                    "index": {"type": "integer"},
                    "seed_used": {"type": "integer"},
                    "content_type": {"type": "string"},
                    "url": {"type": "string"},
                    "data": {"type": "string", "format": "byte", "nullable": true},
                }
            },
            "Tokens": {
                "type": "object",
                "required": ["completion_tokens", "embedding_tokens"],
                "properties": {
                    "completion_tokens": {"type": "integer"},
                    "embedding_tokens": {"type": "integer"},
                    "budget": {"type": "integer", "nullable": true},
                }
            },
            "Job": {
                "type": "object",
                "required": ["job_id", "status", "poll"],
                "properties": {
                    "job_id": {"type": "string"},
                    "status": {"type": "string", "enum": ["pending"]},
                    "poll": {"type": "string"},
                }
            },
            "RunSummary": {
                "type": "object",
                "required": ["run_id", "sequence", "kind", "input_prompt", "image_count"],
                "properties": {
                    "run_id": {"type": "string"},
                    "sequence": {"type": "integer"},
                    "kind": {"type": "string"},
                    "parent_id": {"type": "string", "nullable": true},
                    "input_prompt": {"type": "string"},
                    "image_count": {"type": "integer"},
                    "failure": nullable_obj,
                }
            },
            "RunRecord": {
                "type": "object",
                "required": ["request_id", "sequence", "kind", "input_prompt", "images", "ledger_snapshot", "timings"],
            },
            "CollectionStats": {
                "type": "object",
                "required": ["name", "kind", "dimension", "count"],
                "properties": {
                    "name": {"type": "string"},
                    "kind": {"type": "string", "enum": ["checkpoint", "adapter"]},
                    "dimension": {"type": "integer"},
                    "count": {"type": "integer"},
                }
            },
            "EvalReport": {
                "type": "object",
                "required": ["run", "summary"],
            },
        }}
    })
}
