// Copyright 2026 The qreform Authors.
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

#include "qreform/dataset.hpp"

#include "qreform/error.hpp"

namespace qreform::data {

Dataset build_dataset(std::span<const search::RawDocument> docs,
                      std::span<const search::RawQuery> train,
                      std::span<const search::RawQuery> dev,
                      std::span<const search::RawQuery> test, const search::Qrels& qrels,
                      const search::TokenizerOptions& tokenizer, const search::Bm25Params& bm25) {
  auto corpus = std::make_shared<search::Corpus>(tokenizer);
  for (const auto& d : docs) corpus->add_document(d.doc_id, d.text);
  if (corpus->empty()) throw DataError("corpus is empty");

  Dataset ds;
  ds.qrels = qrels;
  const auto encode = [&](std::span<const search::RawQuery> in, std::vector<Query>& out) {
    for (const auto& q : in) {
      if (!ds.query_text.emplace(q.qid, q.text).second) {
        throw DataError("duplicate query id '" + q.qid + "'");
      }
      std::vector<DocIndex> rel;
      if (auto it = qrels.find(q.qid); it != qrels.end()) {
        for (const auto& id : it->second) {
          if (auto d = corpus->find(id)) rel.push_back(*d);
        }
      }
      if (rel.empty()) {
        ds.dropped.push_back(q.qid);
        continue;
      }
      out.push_back({q.qid, q.text, corpus->encode(q.text), search::RelevantSet(std::move(rel))});
    }
  };
  encode(train, ds.train);
  encode(dev, ds.dev);
  encode(test, ds.test);
  ds.corpus = corpus;
  ds.index = std::make_shared<const search::InvertedIndex>(search::InvertedIndex::build(corpus, bm25));
  return ds;
}

}  // namespace qreform::data
