#include "terraseg/io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace terraseg {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw validation_error(msg);
}

std::ifstream open_in(const std::string& path, bool binary) {
    std::ifstream f(path, binary ? std::ios::binary : std::ios::in);
    require(f.good(), "cannot open file: " + path);
    return f;
}

std::ofstream open_out(const std::string& path, bool binary) {
    std::ofstream f(path, binary ? std::ios::binary : std::ios::out);
    if (!f.good()) throw pipeline_error("cannot write file: " + path);
    return f;
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    require(is.good(), "truncated file while reading " + what);
    return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

PointCloud load_points_csv(const std::string& path) {
    auto f = open_in(path, false);
    std::string line;
    require(static_cast<bool>(std::getline(f, line)), "empty point CSV: " + path);
    auto header = split_csv_line(line);
    require(header.size() == 9 || header.size() == 13,
            "point CSV header must have 9 or 13 columns: " + path);
    bool has_color = header.size() == 13;
    require(header[0] == "x" && header[3] == "intensity" && header[8] == "sensor_id",
            "unrecognized point CSV header: " + path);

    PointCloud cloud;
    size_t line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto cols = split_csv_line(line);
        if (cols.size() != header.size())
            throw validation_error(path + ":" + std::to_string(line_no) + ": wrong column count");
        PointRecord p;
        try {
            p.x = std::stod(cols[0]);
            p.y = std::stod(cols[1]);
            p.z = std::stod(cols[2]);
            p.intensity = std::stod(cols[3]);
            p.scan_angle = static_cast<int16_t>(std::stoi(cols[4]));
            p.return_number = static_cast<uint8_t>(std::stoi(cols[5]));
            p.number_of_returns = static_cast<uint8_t>(std::stoi(cols[6]));
            p.las_class = las_class_from_name(cols[7]);
            p.sensor_id = static_cast<uint16_t>(std::stoi(cols[8]));
            if (has_color) {
                p.has_color = true;
                p.color.r = std::stof(cols[9]);
                p.color.g = std::stof(cols[10]);
                p.color.b = std::stof(cols[11]);
                p.color.nir = std::stof(cols[12]);
            }
        } catch (const validation_error&) {
            throw;
        } catch (const std::exception&) {
            throw validation_error(path + ":" + std::to_string(line_no) + ": malformed row");
        }
        try {
            p.validate();
        } catch (const validation_error& e) {
            throw validation_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        cloud.records.push_back(p);
    }
    return cloud;
}

void save_points_csv(const std::string& path, const PointCloud& cloud) {
    auto f = open_out(path, false);
    bool has_color = !cloud.records.empty() && cloud.records.front().has_color;
    f << "x,y,z,intensity,scan_angle,return_number,number_of_returns,las_class,sensor_id";
    if (has_color) f << ",r,g,b,nir";
    f << "\n";
    f.precision(17);
    for (const auto& p : cloud.records) {
        f << p.x << ',' << p.y << ',' << p.z << ',' << p.intensity << ',' << p.scan_angle << ','
          << int(p.return_number) << ',' << int(p.number_of_returns) << ','
          << las_class_name(p.las_class) << ',' << p.sensor_id;
        if (has_color) {
            if (!p.has_color) throw validation_error("mixed colored/uncolored cloud in CSV save");
            f << ',' << p.color.r << ',' << p.color.g << ',' << p.color.b << ',' << p.color.nir;
        }
        f << "\n";
    }
}

constexpr char kPointMagic[4] = {'T', 'S', 'P', 'C'};
constexpr char kRasterMagic[4] = {'T', 'S', 'R', 'G'};

PointCloud load_points_bin(const std::string& path) {
    auto f = open_in(path, true);
    char magic[4];
    f.read(magic, 4);
    require(f.good() && std::memcmp(magic, kPointMagic, 4) == 0,
            "bad point file magic: " + path);
    uint32_t version = read_pod<uint32_t>(f, "version");
    require(version == 1, "unsupported point file version");
    uint8_t flags = read_pod<uint8_t>(f, "flags");
    bool has_color = (flags & 1u) != 0;
    bool encoded = (flags & 2u) != 0;
    uint64_t count = read_pod<uint64_t>(f, "count");

    PointCloud cloud;
    cloud.intensity_encoded = encoded;
    cloud.records.resize(count);
    for (uint64_t i = 0; i < count; ++i) {
        PointRecord& p = cloud.records[i];
        p.x = read_pod<double>(f, "x");
        p.y = read_pod<double>(f, "y");
        p.z = read_pod<double>(f, "z");
        p.intensity = read_pod<double>(f, "intensity");
        p.scan_angle = read_pod<int16_t>(f, "scan_angle");
        p.return_number = read_pod<uint8_t>(f, "return_number");
        p.number_of_returns = read_pod<uint8_t>(f, "number_of_returns");
        uint8_t cls = read_pod<uint8_t>(f, "las_class");
        require(cls <= 3, "las_class code out of range in " + path);
        p.las_class = static_cast<LasClass>(cls);
        p.sensor_id = read_pod<uint16_t>(f, "sensor_id");
        if (has_color) {
            p.has_color = true;
            p.color.r = read_pod<float>(f, "r");
            p.color.g = read_pod<float>(f, "g");
            p.color.b = read_pod<float>(f, "b");
            p.color.nir = read_pod<float>(f, "nir");
        }
        try {
            p.validate();
        } catch (const validation_error& e) {
            throw validation_error(path + ": record " + std::to_string(i) + ": " + e.what());
        }
    }
    return cloud;
}

void save_points_bin(const std::string& path, const PointCloud& cloud) {
    auto f = open_out(path, true);
    f.write(kPointMagic, 4);
    write_pod<uint32_t>(f, 1);
    bool has_color = !cloud.records.empty() && cloud.records.front().has_color;
    uint8_t flags = (has_color ? 1u : 0u) | (cloud.intensity_encoded ? 2u : 0u);
    write_pod<uint8_t>(f, flags);
    write_pod<uint64_t>(f, cloud.records.size());
    for (const auto& p : cloud.records) {
        write_pod(f, p.x);
        write_pod(f, p.y);
        write_pod(f, p.z);
        write_pod(f, p.intensity);
        write_pod(f, p.scan_angle);
        write_pod(f, p.return_number);
        write_pod(f, p.number_of_returns);
        write_pod<uint8_t>(f, static_cast<uint8_t>(p.las_class));
        write_pod(f, p.sensor_id);
        if (has_color) {
            if (!p.has_color)
                throw validation_error("mixed colored/uncolored cloud in binary save");
            write_pod(f, p.color.r);
            write_pod(f, p.color.g);
            write_pod(f, p.color.b);
            write_pod(f, p.color.nir);
        }
    }
}

} // namespace

PointCloud load_points(const std::string& path, PointFormat format) {
    PointCloud c = format == PointFormat::Csv ? load_points_csv(path) : load_points_bin(path);
    return c;
}

void save_points(const std::string& path, const PointCloud& cloud, PointFormat format) {
    if (format == PointFormat::Csv)
        save_points_csv(path, cloud);
    else
        save_points_bin(path, cloud);
}

PointFormat point_format_from_path(const std::string& path) {
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".csv") return PointFormat::Csv;
    return PointFormat::Bin;
}

PolygonSet load_polygons(const std::string& path) {
    auto f = open_in(path, false);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw validation_error("bad GeoJSON in " + path + ": " + e.what());
    }
    require(j.value("type", "") == "FeatureCollection", "expected FeatureCollection: " + path);
    PolygonSet set;
    for (const auto& feat : j.at("features")) {
        require(feat.value("type", "") == "Feature", "non-Feature entry in " + path);
        const auto& geom = feat.at("geometry");
        require(geom.value("type", "") == "Polygon", "only Polygon geometries supported");
        TaggedPolygon tp;
        if (feat.contains("properties") && feat["properties"].is_object() &&
            feat["properties"].contains("class"))
            tp.tag = class_tag_from_name(feat["properties"]["class"].get<std::string>());
        const auto& rings = geom.at("coordinates");
        require(rings.is_array() && !rings.empty(), "polygon without rings");
        for (size_t r = 0; r < rings.size(); ++r) {
            std::vector<std::array<double, 2>> ring;
            for (const auto& v : rings[r])
                ring.push_back({v.at(0).get<double>(), v.at(1).get<double>()});
            // GeoJSON rings repeat the first vertex; store open.
            if (ring.size() >= 2 && ring.front() == ring.back()) ring.pop_back();
            if (r == 0)
                tp.shape.outer = std::move(ring);
            else
                tp.shape.holes.push_back(std::move(ring));
        }
        tp.shape.validate();
        set.polys.push_back(std::move(tp));
    }
    return set;
}

void save_polygons(const std::string& path, const PolygonSet& set) {
    nlohmann::json features = nlohmann::json::array();
    for (const auto& tp : set.polys) {
        nlohmann::json rings = nlohmann::json::array();
        auto emit_ring = [&](const std::vector<std::array<double, 2>>& ring) {
            nlohmann::json r = nlohmann::json::array();
            for (const auto& v : ring) r.push_back({v[0], v[1]});
            r.push_back({ring.front()[0], ring.front()[1]});
            rings.push_back(std::move(r));
        };
        emit_ring(tp.shape.outer);
        for (const auto& h : tp.shape.holes) emit_ring(h);
        features.push_back({{"type", "Feature"},
                            {"properties", {{"class", class_tag_name(tp.tag)}}},
                            {"geometry", {{"type", "Polygon"}, {"coordinates", rings}}}});
    }
    nlohmann::json j = {{"type", "FeatureCollection"}, {"features", features}};
    auto f = open_out(path, false);
    f << j.dump(1) << "\n";
}

Raster load_raster(const std::string& path) {
    auto f = open_in(path, true);
    char magic[4];
    f.read(magic, 4);
    require(f.good() && std::memcmp(magic, kRasterMagic, 4) == 0,
            "bad raster file magic: " + path);
    uint32_t version = read_pod<uint32_t>(f, "version");
    require(version == 1, "unsupported raster file version");
    double ox = read_pod<double>(f, "origin_x");
    double oy = read_pod<double>(f, "origin_y");
    double cs = read_pod<double>(f, "cell_size");
    uint32_t w = read_pod<uint32_t>(f, "width");
    uint32_t h = read_pod<uint32_t>(f, "height");
    uint16_t nch = read_pod<uint16_t>(f, "channel count");
    Raster r(ox, oy, cs, static_cast<int>(w), static_cast<int>(h));
    for (uint16_t c = 0; c < nch; ++c) {
        uint16_t len = read_pod<uint16_t>(f, "channel name length");
        std::string name(len, '\0');
        f.read(name.data(), len);
        require(f.good(), "truncated channel name in " + path);
        float nodata = read_pod<float>(f, "nodata");
        auto& ch = r.add_channel(name, static_cast<double>(nodata));
        std::vector<float> buf(r.cell_count());
        f.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)));
        require(f.good(), "truncated channel data in " + path);
        for (size_t i = 0; i < buf.size(); ++i) ch[i] = static_cast<double>(buf[i]);
    }
    return r;
}

void save_raster(const std::string& path, const Raster& raster) {
    auto f = open_out(path, true);
    f.write(kRasterMagic, 4);
    write_pod<uint32_t>(f, 1);
    write_pod(f, raster.origin_x());
    write_pod(f, raster.origin_y());
    write_pod(f, raster.cell_size());
    write_pod<uint32_t>(f, static_cast<uint32_t>(raster.width()));
    write_pod<uint32_t>(f, static_cast<uint32_t>(raster.height()));
    write_pod<uint16_t>(f, static_cast<uint16_t>(raster.channel_names().size()));
    for (const auto& name : raster.channel_names()) {
        write_pod<uint16_t>(f, static_cast<uint16_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod<float>(f, static_cast<float>(raster.nodata(name)));
        const auto& ch = raster.channel(name);
        std::vector<float> buf(ch.size());
        for (size_t i = 0; i < ch.size(); ++i) buf[i] = static_cast<float>(ch[i]);
        f.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
}

} // namespace terraseg
