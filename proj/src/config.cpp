#include "ssmaf/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace ssmaf {

namespace {

std::string_view trim(std::string_view s) {
	const auto first = s.find_first_not_of(" \t\r");
	if (first == std::string_view::npos) return {};
	const auto last = s.find_last_not_of(" \t\r");
	return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
	T value{};
	const char* begin = text.data();
	const char* end = begin + text.size();
	auto [ptr, ec] = std::from_chars(begin, end, value);
	if (ec != std::errc() || ptr != end)
		throw ConfigError("invalid value '" + text + "' for key '" + key + "'");
	return value;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text) {
	KeyValueConfig cfg;
	std::string section;
	std::size_t line_no = 0;
	std::size_t pos = 0;
	while (pos <= text.size()) {
		auto nl = text.find('\n', pos);
		if (nl == std::string_view::npos) nl = text.size();
		std::string_view line = trim(text.substr(pos, nl - pos));
		pos = nl + 1;
		++line_no;
		if (line.empty() || line.front() == '#' || line.front() == ';') continue;
		if (line.front() == '[') {
			if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": unterminated section header");
			section = std::string(trim(line.substr(1, line.size() - 2)));
			continue;
		}
		const auto eq = line.find('=');
		if (eq == std::string_view::npos)
			throw ConfigError("line " + std::to_string(line_no) + ": expected key=value, got '" + std::string(line) + "'");
		std::string key(trim(line.substr(0, eq)));
		if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
		if (!section.empty()) key = section + "." + key;
		cfg.values_[key] = std::string(trim(line.substr(eq + 1)));
	}
	return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
	std::ifstream in(path);
	if (!in) throw ConfigError("cannot open config file " + path.string());
	std::stringstream ss;
	ss << in.rdbuf();
	return parse(ss.str());
}

void KeyValueConfig::set_override(std::string_view assignment) {
	const auto eq = assignment.find('=');
	if (eq == std::string_view::npos || eq == 0)
		throw ConfigError("override '" + std::string(assignment) + "' is not of the form section.key=value");
	std::string key(trim(assignment.substr(0, eq)));
	if (key.find('.') == std::string::npos)
		throw ConfigError("override key '" + key + "' must be qualified as section.key");
	values_[key] = std::string(trim(assignment.substr(eq + 1)));
}

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
	auto it = values_.find(key);
	if (it == values_.end()) return std::nullopt;
	return it->second;
}

void KeyValueConfig::reject_unknown(const std::set<std::string>& known) const {
	for (const auto& [key, value] : values_)
		if (!known.count(key)) throw ConfigError("unknown configuration key '" + key + "'");
}

std::string KeyValueConfig::to_text() const {
	std::ostringstream os;
	std::string current;
	bool first = true;
	for (const auto& [key, value] : values_) {
		const auto dot = key.find('.');
		const std::string section = dot == std::string::npos ? std::string() : key.substr(0, dot);
		const std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
		if (first || section != current) {
			if (!section.empty()) os << '[' << section << "]\n";
			current = section;
			first = false;
		}
		os << name << '=' << value << '\n';
	}
	return os.str();
}

void KeyValueConfig::read(const std::string& key, int& out) const {
	if (auto v = get(key)) out = parse_number<int>(key, *v);
}
void KeyValueConfig::read(const std::string& key, unsigned long& out) const {
	if (auto v = get(key)) out = parse_number<unsigned long>(key, *v);
}
void KeyValueConfig::read(const std::string& key, unsigned long long& out) const {
	if (auto v = get(key)) out = parse_number<unsigned long long>(key, *v);
}
void KeyValueConfig::read(const std::string& key, double& out) const {
	if (auto v = get(key)) out = parse_number<double>(key, *v);
}
void KeyValueConfig::read(const std::string& key, std::string& out) const {
	if (auto v = get(key)) out = *v;
}

std::string format_double(double v) {
	char buf[64];
	auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
	return std::string(buf, ptr);
}

}  // namespace ssmaf
