// Flat `key = value` config documents used for run configs and checkpoints.
#pragma once

#include <map>
#include <string>

namespace bachi {

using KVMap = std::map<std::string, std::string>;

KVMap parse_kv_text(const std::string& text);
KVMap load_kv_file(const std::string& path);
std::string format_kv(const KVMap& kv);

std::string kv_get(const KVMap& kv, const std::string& key, const std::string& fallback);
long kv_get_long(const KVMap& kv, const std::string& key, long fallback);
double kv_get_double(const KVMap& kv, const std::string& key, double fallback);
bool kv_get_bool(const KVMap& kv, const std::string& key, bool fallback);

}  // namespace bachi
