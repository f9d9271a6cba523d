#ifndef SSMAF_CONFIG_HPP_
#define SSMAF_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ssmaf {

class ConfigError : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

/**
 * Flat key=value configuration with INI-style sections. Keys are stored fully qualified as
 * "section.key". Lines starting with '#' or ';' are comments.
 *
 *   [model]
 *   base_width = 16
 *   [train]
 *   epochs = 300
 */
class KeyValueConfig {
public:
	static KeyValueConfig parse(std::string_view text);
	static KeyValueConfig load(const std::filesystem::path& path);

	/// Parses "section.key=value".
	void set_override(std::string_view assignment);
	void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
	bool contains(const std::string& key) const { return values_.count(key) != 0; }
	std::optional<std::string> get(const std::string& key) const;

	/// Throws ConfigError naming the first key not in `known`.
	void reject_unknown(const std::set<std::string>& known) const;

	std::string to_text() const;
	const std::map<std::string, std::string>& entries() const { return values_; }

	// Typed readers; leave `out` untouched when the key is absent.
	void read(const std::string& key, int& out) const;
	void read(const std::string& key, unsigned long& out) const;
	void read(const std::string& key, unsigned long long& out) const;
	void read(const std::string& key, double& out) const;
	void read(const std::string& key, std::string& out) const;

private:
	std::map<std::string, std::string> values_;
};

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace ssmaf

#endif  // SSMAF_CONFIG_HPP_
