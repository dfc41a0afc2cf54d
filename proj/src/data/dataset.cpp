#include "gtalk/data/dataset.hpp"

#include "gtalk/util/error.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace gtalk::data {

namespace {

std::string num(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

class LineReader {
public:
    LineReader(std::string line, std::size_t lineno, std::string where)
        : in_(std::move(line)), lineno_(lineno), where_(std::move(where)) {}

    std::string word() {
        std::string w;
        if (!(in_ >> w)) fail("unexpected end of line");
        return w;
    }
    void expect(const std::string& keyword) {
        const std::string w = word();
        if (w != keyword) fail("expected '" + keyword + "', got '" + w + "'");
    }
    double real() {
        const std::string w = word();
        double v = 0;
        auto [p, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
        if (ec != std::errc() || p != w.data() + w.size()) fail("bad number '" + w + "'");
        return v;
    }
    std::uint64_t integer() {
        const std::string w = word();
        std::uint64_t v = 0;
        auto [p, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
        if (ec != std::errc() || p != w.data() + w.size()) fail("bad integer '" + w + "'");
        return v;
    }
    void done() {
        std::string extra;
        if (in_ >> extra) fail("trailing token '" + extra + "'");
    }
    [[noreturn]] void fail(const std::string& msg) const {
        throw DataError("manifest line " + std::to_string(lineno_) + where_ + ": " + msg);
    }

private:
    std::istringstream in_;
    std::size_t lineno_;
    std::string where_;
};

} // namespace

Camera DatasetManifest::camera(std::size_t frame) const {
    Camera c;
    c.world_to_camera = frames.at(frame).extrinsic;
    c.fx = fx;
    c.fy = fy;
    c.cx = cx;
    c.cy = cy;
    c.width = width;
    c.height = height;
    return c;
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write manifest " + path.string());
    out << "gtalk-dataset 1\n";
    out << "scenario " << m.scenario << "\n";
    out << "seed " << m.seed << "\n";
    out << "size " << m.width << " " << m.height << "\n";
    out << "intrinsics " << num(m.fx) << " " << num(m.fy) << " " << num(m.cx) << " " << num(m.cy) << "\n";
    out << "audio_dim " << m.audio_dim << "\n";
    out << "points " << m.points << "\n";
    out << "mouth_ids " << m.mouth_ids.size();
    for (auto id : m.mouth_ids) out << " " << id;
    out << "\neye_ids " << m.eye_ids.size();
    for (auto id : m.eye_ids) out << " " << id;
    out << "\nframes " << m.frames.size() << "\n";
    for (const auto& f : m.frames) {
        out << "frame " << f.index << (f.test ? " test" : " train") << " image " << f.image << " background "
            << f.background << " eye " << num(f.eye) << " lip " << f.lip.x0 << " " << f.lip.y0 << " " << f.lip.x1 << " "
            << f.lip.y1 << " extrinsic";
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 4; ++c) out << " " << num(f.extrinsic(r, c));
        out << " audio";
        for (double a : f.audio) out << " " << num(a);
        out << "\n";
    }
    if (!out) throw Error("error while writing manifest " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest " + path.string());
    DatasetManifest m;
    m.root = path.parent_path();
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    std::size_t i = 0;
    auto next = [&](const std::string& where = "") {
        if (i >= lines.size()) throw DataError("manifest " + path.string() + " ends early (line " + std::to_string(i + 1) + ")");
        LineReader r(lines[i], i + 1, where);
        ++i;
        return r;
    };
    {
        auto r = next();
        r.expect("gtalk-dataset");
        if (r.integer() != 1) r.fail("unsupported manifest version");
        r.done();
    }
    { auto r = next(); r.expect("scenario"); m.scenario = r.word(); r.done(); }
    { auto r = next(); r.expect("seed"); m.seed = r.integer(); r.done(); }
    {
        auto r = next();
        r.expect("size");
        m.width = static_cast<int>(r.integer());
        m.height = static_cast<int>(r.integer());
        r.done();
    }
    {
        auto r = next();
        r.expect("intrinsics");
        m.fx = r.real();
        m.fy = r.real();
        m.cx = r.real();
        m.cy = r.real();
        r.done();
    }
    { auto r = next(); r.expect("audio_dim"); m.audio_dim = r.integer(); r.done(); }
    { auto r = next(); r.expect("points"); m.points = r.word(); r.done(); }
    for (auto [key, ids] : {std::pair{"mouth_ids", &m.mouth_ids}, std::pair{"eye_ids", &m.eye_ids}}) {
        auto r = next();
        r.expect(key);
        const std::size_t k = r.integer();
        for (std::size_t j = 0; j < k; ++j) ids->push_back(static_cast<std::uint32_t>(r.integer()));
        r.done();
    }
    std::size_t count = 0;
    { auto r = next(); r.expect("frames"); count = r.integer(); r.done(); }
    for (std::size_t n = 0; n < count; ++n) {
        auto r = next(" (frame " + std::to_string(n) + ")");
        FrameRecord f;
        r.expect("frame");
        f.index = r.integer();
        if (f.index != n) r.fail("frame index " + std::to_string(f.index) + " out of order");
        const std::string split = r.word();
        if (split != "train" && split != "test") r.fail("split must be train or test, got '" + split + "'");
        f.test = split == "test";
        r.expect("image");
        f.image = r.word();
        r.expect("background");
        f.background = r.word();
        r.expect("eye");
        f.eye = r.real();
        r.expect("lip");
        f.lip.x0 = static_cast<int>(r.integer());
        f.lip.y0 = static_cast<int>(r.integer());
        f.lip.x1 = static_cast<int>(r.integer());
        f.lip.y1 = static_cast<int>(r.integer());
        r.expect("extrinsic");
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 4; ++b) f.extrinsic(a, b) = r.real();
        r.expect("audio");
        for (std::size_t k = 0; k < m.audio_dim; ++k) f.audio.push_back(r.real());
        r.done();
        m.frames.push_back(std::move(f));
    }
    return m;
}

Dataset load_dataset(const std::filesystem::path& manifest_path, Split split) {
    Dataset d;
    d.manifest = read_manifest(manifest_path);
    std::map<std::string, Image8> backgrounds;
    for (const auto& rec : d.manifest.frames) {
        if (split == Split::train && rec.test) continue;
        if (split == Split::test && !rec.test) continue;
        const std::string where = "frame " + std::to_string(rec.index);
        Frame f;
        f.index = rec.index;
        auto load = [&](const std::string& rel) {
            const auto p = d.manifest.root / rel;
            if (!std::filesystem::exists(p)) throw DataError(where + ": missing file " + p.string());
            try {
                return read_png(p);
            } catch (const Error& e) {
                throw DataError(where + ": " + e.what());
            }
        };
        f.image = load(rec.image);
        auto bg = backgrounds.find(rec.background);
        if (bg == backgrounds.end()) bg = backgrounds.emplace(rec.background, load(rec.background)).first;
        f.background = bg->second;
        if (f.image.width != d.manifest.width || f.image.height != d.manifest.height || !f.background.same_shape(f.image))
            throw DataError(where + ": image size does not match the manifest");
        f.condition.audio = rec.audio;
        f.condition.eye = rec.eye;
        f.condition.camera = d.manifest.camera(rec.index);
        f.lip = rec.lip;
        d.frames.push_back(std::move(f));
    }
    return d;
}

} // namespace gtalk::data
