// Copyright 2026 The Prefalign Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#ifndef PREFALIGN_EVAL_HTTP_TRANSPORT_HPP_
#define PREFALIGN_EVAL_HTTP_TRANSPORT_HPP_

// Include after any Eigen-based header: <resolv.h> defines a `_res` macro.
#include <string>

#include <httplib.h>

#include "prefalign/error.hpp"
#include "prefalign/eval/judge.hpp"

namespace prefalign::eval {

// POST over httplib; "https://" needs the OpenSSL build of httplib.
inline HttpTransport httplib_transport(int timeout_seconds = 60) {
  return [timeout_seconds](const std::string& url, const HttpHeaders& headers, const std::string& body) {
    const auto scheme_end = url.find("://");
    require(scheme_end != std::string::npos, "judge endpoint must be an absolute URL: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    const std::string origin = url.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);
    httplib::Client client(origin);
    client.set_connection_timeout(timeout_seconds, 0);
    client.set_read_timeout(timeout_seconds, 0);
    httplib::Headers h;
    std::string content_type = "application/json";
    for (const auto& [k, v] : headers) {
      if (k == "Content-Type") content_type = v;
      else h.emplace(k, v);
    }
    auto res = client.Post(path, h, body, content_type);
    if (!res) fail(ErrorCode::kUnavailable, "judge endpoint unreachable: " + httplib::to_string(res.error()));
    return HttpReply{res->status, res->body};
  };
}

}  // namespace prefalign::eval

#endif  // PREFALIGN_EVAL_HTTP_TRANSPORT_HPP_
