search_schema = {
    "type": "object",
    "properties": {
        "text": {"type": "string", "minLength": 1},
        "vector": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "k": {"type": "integer", "minimum": 1, "maximum": 1000},
        "quantized": {"type": "boolean"}
    },
    "oneOf": [
        {"required": ["text"]},
        {"required": ["vector"]}
    ]
}
